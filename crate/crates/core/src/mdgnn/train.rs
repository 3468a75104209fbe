use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::event::{partition_batches, sample_negatives, EventStream, TemporalBatch};
use crate::mdgnn::step::{run_step, Plan, PresHooks, StepOutput};
use crate::mdgnn::{Hyperparams, MemoryPolicy, MemoryStore, MemoryUpdateSource, Model};
use crate::numerics::sgd_step;
use crate::pres::{FusionGate, GmmTracker, PredictionClock, PresConfig, PresView, TrackerPolicy};

const TRAIN_TAG: u64 = 0x0074_7261_696e;
const EVAL_TAG: u64 = 0x6576_616c;

/// Summary of one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Summed prediction loss over all batches.
    pub loss: f64,
    /// Summed smoothing penalty over all batches.
    pub penalty: f64,
    pub min_penalty: f64,
    pub max_penalty: f64,
    pub num_batches: usize,
    /// Mean number of memory rows written per batch.
    pub mean_updates: f64,
    pub seconds: f64,
    /// Wall-clock of the prediction-correction and smoothing stages.
    pub pres_seconds: f64,
    pub gamma: Option<f64>,
}

/// One row of the per-epoch metrics file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ap: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub stats: Vec<EpochStats>,
}

impl RunMetrics {
    pub fn final_ap(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.ap)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_metrics_csv(w, &self.epochs)
    }
}

pub fn write_metrics_csv(w: impl Write, records: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record(["epoch", "loss", "ap", "seconds"])
        .map_err(io)?;
    for r in records {
        out.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.ap.to_string(),
            r.seconds.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Partitions `stream` and samples negatives for every batch, with seeds
/// derived from `(seed, tag, epoch, batch index)`.
pub fn prepare_batches(
    stream: &EventStream,
    hyper: &Hyperparams,
    epoch: usize,
) -> Result<Vec<TemporalBatch>> {
    batches_with_tag(stream, hyper, TRAIN_TAG, epoch as u64)
}

/// Evaluation batches; their negatives do not depend on the epoch.
pub fn prepare_eval_batches(
    stream: &EventStream,
    hyper: &Hyperparams,
) -> Result<Vec<TemporalBatch>> {
    batches_with_tag(stream, hyper, EVAL_TAG, 0)
}

fn batches_with_tag(
    stream: &EventStream,
    hyper: &Hyperparams,
    tag: u64,
    epoch: u64,
) -> Result<Vec<TemporalBatch>> {
    partition_batches(stream, hyper.batch_size)?
        .iter()
        .map(|b| {
            let seed = crate::seed::derive(hyper.seed, &[tag, epoch, b.index() as u64]);
            sample_negatives(b, stream, &hyper.negatives, seed)
        })
        .collect()
}

/// Mutable prediction-correction state threaded through an epoch.
pub(crate) struct PresState<'a> {
    pub tracker: &'a mut GmmTracker,
    pub gate: &'a mut FusionGate,
    pub beta: f64,
    pub clock: PredictionClock,
}

pub(crate) struct EpochOutcome {
    pub stats: EpochStats,
    pub last_batch: TemporalBatch,
}

/// Lag-one epoch over pre-sampled batches: forward, write memory, backward,
/// then update parameters.
pub(crate) fn run_epoch(
    model: &mut Model,
    mem: &mut MemoryStore,
    batches: &[TemporalBatch],
    hyper: &Hyperparams,
    epoch: usize,
    mut pres: Option<PresState<'_>>,
    mut observe: impl FnMut(&TemporalBatch, &StepOutput),
) -> Result<EpochOutcome> {
    hyper.validate()?;
    if batches.is_empty() {
        return Err(Error::EmptyStream);
    }
    match hyper.memory_policy {
        MemoryPolicy::Reset => mem.reset(),
        MemoryPolicy::Carry => mem.rewind(),
    }
    model.params_mut().zero_grads();
    let clock = Instant::now();
    let mut stats = EpochStats {
        epoch,
        loss: 0.0,
        penalty: 0.0,
        min_penalty: f64::INFINITY,
        max_penalty: f64::NEG_INFINITY,
        num_batches: batches.len(),
        mean_updates: 0.0,
        seconds: 0.0,
        pres_seconds: 0.0,
        gamma: None,
    };
    let empty = TemporalBatch::empty();
    let mut prev = &empty;
    for cur in batches {
        let hooks = pres.as_ref().map(|p| PresHooks {
            tracker: &*p.tracker,
            gate: &*p.gate,
            beta: p.beta,
            clock: p.clock,
        });
        let (out, gamma_grad, plan) = run_step(
            model,
            mem,
            prev,
            cur,
            hyper.memory_update_source,
            hooks,
            true,
        )
        .map_err(|e| annotate(e, epoch, cur.index()))?;
        if let Some(p) = pres.as_mut() {
            let clock = Instant::now();
            update_tracker_from(p.tracker, &plan, &out)?;
            stats.pres_seconds += clock.elapsed().as_secs_f64();
            if let Some(g) = gamma_grad {
                p.gate.accumulate(g);
            }
        }
        if hyper.lr > 0.0 {
            sgd_step(model.params_mut(), hyper.lr).map_err(|e| annotate(e, epoch, cur.index()))?;
            if let Some(p) = pres.as_mut() {
                p.gate.sgd_step(hyper.lr)?;
            }
        } else {
            model.params_mut().zero_grads();
            if let Some(p) = pres.as_mut() {
                p.gate.zero_grad();
            }
        }
        stats.loss += out.loss;
        stats.penalty += out.penalty;
        stats.min_penalty = stats.min_penalty.min(out.penalty);
        stats.max_penalty = stats.max_penalty.max(out.penalty);
        stats.mean_updates += out.updated.len() as f64;
        stats.pres_seconds += out.pres_seconds;
        observe(cur, &out);
        prev = cur;
    }
    stats.mean_updates /= batches.len() as f64;
    stats.seconds = clock.elapsed().as_secs_f64();
    stats.gamma = pres.as_ref().map(|p| p.gate.gamma());
    Ok(EpochOutcome {
        stats,
        last_batch: prev.clone(),
    })
}

fn annotate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Feeds `δ = s̄ − ŝ` for every written vertex into the tracker. Non-finite
/// deltas are skipped and counted by the tracker.
pub(crate) fn update_tracker_from(
    tracker: &mut GmmTracker,
    plan: &Plan,
    out: &StepOutput,
) -> Result<()> {
    let Some(pred) = &out.predicted else {
        return Ok(());
    };
    for (k, &v) in plan.vertices.iter().enumerate() {
        let delta: Vec<f64> = out
            .new_states
            .row(k)
            .iter()
            .zip(pred.row(k))
            .map(|(s, p)| s - p)
            .collect();
        match tracker.update(v, plan.polarity[k], &delta) {
            Ok(()) | Err(Error::Numeric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// One standard epoch: memory per the policy, negatives sampled per batch.
pub fn train_epoch(
    model: &mut Model,
    mem: &mut MemoryStore,
    stream: &EventStream,
    hyper: &Hyperparams,
    epoch: usize,
) -> Result<EpochStats> {
    let batches = prepare_batches(stream, hyper, epoch)?;
    Ok(run_epoch(model, mem, &batches, hyper, epoch, None, |_, _| {})?.stats)
}

/// Runs one lag-one step, writes memory and accumulates gradients into the
/// model's parameters.
pub fn process_batch(
    model: &mut Model,
    mem: &mut MemoryStore,
    prev: &TemporalBatch,
    cur: &TemporalBatch,
    source: MemoryUpdateSource,
) -> Result<StepOutput> {
    Ok(run_step(model, mem, prev, cur, source, None, true)?.0)
}

/// Loss and flattened parameter gradient for one step, leaving memory and
/// the model's gradient accumulators untouched.
pub fn batch_gradient(
    model: &Model,
    mem: &MemoryStore,
    prev: &TemporalBatch,
    cur: &TemporalBatch,
    source: MemoryUpdateSource,
) -> Result<(f64, Vec<f64>)> {
    let mut m = model.clone();
    m.params_mut().zero_grads();
    let mut scratch = mem.clone();
    let (out, _, _) = run_step(&mut m, &mut scratch, prev, cur, source, None, true)?;
    Ok((out.total(), m.params().flat_grad()))
}

/// Sklearn-style average precision: precision is evaluated once per distinct
/// score and weighted by the recall gained there.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision with no positives".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let mut gained = 0;
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                gained += 1;
            }
            seen += 1;
            k += 1;
        }
        if gained > 0 {
            tp += gained;
            ap += gained as f64 / positives as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Collects scores over `eval` in lag-one order starting from `prev`,
/// rolling memory (and the tracker) forward on copies.
pub(crate) fn collect_scores(
    model: &Model,
    mem: &MemoryStore,
    pres: Option<PresView<'_>>,
    prev: &TemporalBatch,
    eval: &[TemporalBatch],
    source: MemoryUpdateSource,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut model = model.clone();
    let mut mem = mem.clone();
    let mut tracker = pres.map(|p| p.tracker.clone());
    let gate = pres.map(|p| p.gate.clone());
    let clock = pres.map_or(PredictionClock::default(), |p| p.clock);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut prev = prev;
    for cur in eval {
        let hooks = match (&tracker, &gate) {
            (Some(t), Some(g)) => Some(PresHooks {
                tracker: t,
                gate: g,
                beta: 0.0,
                clock,
            }),
            _ => None,
        };
        let (out, _, plan) = run_step(&mut model, &mut mem, prev, cur, source, hooks, false)?;
        if let Some(t) = tracker.as_mut() {
            update_tracker_from(t, &plan, &out)?;
        }
        labels.extend((0..out.logits.len()).map(|k| k < out.num_positives));
        scores.extend_from_slice(&out.logits);
        prev = cur;
    }
    Ok((scores, labels))
}

/// Average precision over evaluation batches (with negatives), continuing
/// from memory that has seen everything before `prev`.
pub fn evaluate_ap(
    model: &Model,
    mem: &MemoryStore,
    prev: &TemporalBatch,
    eval: &[TemporalBatch],
    source: MemoryUpdateSource,
) -> Result<f64> {
    let (scores, labels) = collect_scores(model, mem, None, prev, eval, source)?;
    average_precision(&scores, &labels)
}

/// Owns a model and its run state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    hyper: Hyperparams,
    memory: MemoryStore,
    pres: Option<(PresConfig, GmmTracker, FusionGate)>,
    last_batch: TemporalBatch,
    epochs_done: usize,
    record_seconds: bool,
}

impl Trainer {
    pub fn new(stream: &EventStream, hyper: Hyperparams) -> Result<Self> {
        let model = Model::new(stream.feature_dim(), &hyper)?;
        let memory = MemoryStore::new(stream.num_vertices(), hyper.memory_dim, hyper.neighbor_cap);
        Ok(Self {
            model,
            hyper,
            memory,
            pres: None,
            last_batch: TemporalBatch::empty(),
            epochs_done: 0,
            record_seconds: true,
        })
    }

    /// Enables prediction-correction and smoothing.
    pub fn with_pres(mut self, cfg: PresConfig) -> Result<Self> {
        cfg.validate()?;
        let gate = match cfg.pin_gamma {
            Some(g) => FusionGate::pinned(g)?,
            None => FusionGate::new(cfg.gamma_init)?,
        };
        let tracker = GmmTracker::new(self.memory.num_vertices(), self.hyper.memory_dim);
        self.pres = Some((cfg, tracker, gate));
        Ok(self)
    }

    /// Report zero wall-clock in metrics so that output files are reproducible.
    pub fn record_seconds(mut self, on: bool) -> Self {
        self.record_seconds = on;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn tracker(&self) -> Option<&GmmTracker> {
        self.pres.as_ref().map(|(_, t, _)| t)
    }

    pub fn gate(&self) -> Option<&FusionGate> {
        self.pres.as_ref().map(|(_, _, g)| g)
    }

    pub fn pres_view(&self) -> Option<PresView<'_>> {
        self.pres.as_ref().map(|(cfg, tracker, gate)| PresView {
            tracker,
            gate,
            clock: cfg.clock,
        })
    }

    pub fn pres_config(&self) -> Option<&PresConfig> {
        self.pres.as_ref().map(|(c, _, _)| c)
    }

    pub fn last_batch(&self) -> &TemporalBatch {
        &self.last_batch
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn train_epoch(&mut self, stream: &EventStream) -> Result<EpochStats> {
        self.train_epoch_observed(stream, |_, _| {})
    }

    /// Trains one epoch, calling `observe` after every batch.
    pub fn train_epoch_observed(
        &mut self,
        stream: &EventStream,
        observe: impl FnMut(&TemporalBatch, &StepOutput),
    ) -> Result<EpochStats> {
        let epoch = self.epochs_done;
        let batches = prepare_batches(stream, &self.hyper, epoch)?;
        let pres = match self.pres.as_mut() {
            Some((cfg, tracker, gate)) => {
                if cfg.tracker_policy == TrackerPolicy::Reset {
                    tracker.reset();
                }
                Some(PresState {
                    tracker,
                    gate,
                    beta: cfg.beta,
                    clock: cfg.clock,
                })
            }
            None => None,
        };
        let out = run_epoch(
            &mut self.model,
            &mut self.memory,
            &batches,
            &self.hyper,
            epoch,
            pres,
            observe,
        )?;
        self.last_batch = out.last_batch;
        self.epochs_done += 1;
        Ok(out.stats)
    }

    /// Average precision on a stream that follows the training stream.
    pub fn evaluate(&self, stream: &EventStream) -> Result<f64> {
        let batches = prepare_eval_batches(stream, &self.hyper)?;
        let (scores, labels) = collect_scores(
            &self.model,
            &self.memory,
            self.pres_view(),
            &self.last_batch,
            &batches,
            self.hyper.memory_update_source,
        )?;
        average_precision(&scores, &labels)
    }

    /// Trains for `hyper.epochs` epochs, evaluating on `val` after each.
    pub fn fit(&mut self, train: &EventStream, val: &EventStream) -> Result<RunMetrics> {
        let mut metrics = RunMetrics::default();
        for _ in 0..self.hyper.epochs {
            let stats = self.train_epoch(train)?;
            let ap = self.evaluate(val)?;
            metrics.epochs.push(EpochRecord {
                epoch: stats.epoch,
                loss: stats.loss + stats.penalty,
                ap,
                seconds: if self.record_seconds {
                    stats.seconds
                } else {
                    0.0
                },
            });
            metrics.stats.push(stats);
        }
        Ok(metrics)
    }
}
