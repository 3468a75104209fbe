use std::io::Write;

use crate::error::{Error, Result};
use crate::event::{partition_batches, pending_indices, EventStream, TemporalBatch};
use crate::mdgnn::model::Net;
use crate::mdgnn::step::{run_step, PresHooks};
use crate::mdgnn::train::update_tracker_from;
use crate::mdgnn::{memory_update, message_fn, Hyperparams, MemoryStore, Model};
use crate::numerics::{Tape, Tensor};
use crate::pres::{PredictionClock, PresView};

/// Coherence of one event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventCoherence {
    /// No pending events; reported as 1 and left out of batch statistics.
    NoPending,
    Defined(f64),
    /// The fresh gradient vanished.
    Undefined,
}

impl EventCoherence {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::NoPending => Some(1.0),
            Self::Defined(mu) => Some(mu),
            Self::Undefined => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchCoherence {
    pub batch_index: usize,
    pub events: Vec<EventCoherence>,
}

impl BatchCoherence {
    fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().filter_map(|e| match e {
            EventCoherence::Defined(mu) => Some(*mu),
            _ => None,
        })
    }

    /// Minimum over events with pending sets and a defined ratio.
    pub fn min(&self) -> Option<f64> {
        self.defined().reduce(f64::min)
    }

    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.defined().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Undefined events as a fraction of events with a non-empty pending set.
    pub fn frac_undefined(&self) -> f64 {
        let with_pending = self
            .events
            .iter()
            .filter(|e| !matches!(e, EventCoherence::NoPending))
            .count();
        if with_pending == 0 {
            return 0.0;
        }
        let undefined = self
            .events
            .iter()
            .filter(|e| matches!(e, EventCoherence::Undefined))
            .count();
        undefined as f64 / with_pending as f64
    }
}

/// `⟨g_stale, g_fresh⟩ / ‖g_fresh‖²`, or `None` for a zero fresh gradient.
pub fn coherence_ratio(stale: &[f64], fresh: &[f64]) -> Result<Option<f64>> {
    if stale.len() != fresh.len() {
        return Err(Error::dim(format!(
            "gradients of {} and {}",
            stale.len(),
            fresh.len()
        )));
    }
    let den: f64 = fresh.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Ok(None);
    }
    let num: f64 = stale.iter().zip(fresh).map(|(a, b)| a * b).sum();
    Ok(Some(num / den))
}

/// Gradient of the positive-label loss of a link with endpoint memories
/// `(s_i, s_j)`, taken with respect to both memories and concatenated.
pub fn pair_loss_gradient(model: &Model, s_i: &[f64], s_j: &[f64]) -> Result<Vec<f64>> {
    let ds = model.memory_dim();
    if s_i.len() != ds || s_j.len() != ds {
        return Err(Error::dim(format!(
            "memory pair of {} and {} for width {ds}",
            s_i.len(),
            s_j.len()
        )));
    }
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let a = tape.leaf(Tensor::new(1, ds, s_i.to_vec())?);
    let b = tape.leaf(Tensor::new(1, ds, s_j.to_vec())?);
    let ha = net.embed_plain(&mut tape, a)?;
    let hb = net.embed_plain(&mut tape, b)?;
    let z = net.decode(&mut tape, ha, hb)?;
    let loss = tape.bce_with_logits(z, &[1.0])?;
    let g = tape.backward(loss)?;
    let mut out = Vec::with_capacity(2 * ds);
    for v in [a, b] {
        match g.wrt(v) {
            Some(t) => out.extend_from_slice(t.data()),
            None => out.extend(std::iter::repeat_n(0.0, ds)),
        }
    }
    Ok(out)
}

/// Per-event memory coherence of a batch's positives.
///
/// Events are replayed one at a time from `mem`; the memory of `(i, j)`
/// right after each event is the snapshot for that event. Each event's
/// fresh gradient uses its own snapshot, and each pending event's snapshot
/// provides a stale gradient.
pub fn empirical_memory_coherence(
    model: &Model,
    batch: &TemporalBatch,
    mem: &MemoryStore,
) -> Result<BatchCoherence> {
    let events = batch.positives();
    let pending: Vec<Vec<usize>> = (0..events.len())
        .map(|k| pending_indices(batch, k))
        .collect::<Result<_>>()?;
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); events.len()];
    for (l, p) in pending.iter().enumerate() {
        for &k in p {
            dependents[k].push(l);
        }
    }
    let mut stale: Vec<Vec<(Vec<f64>, Vec<f64>)>> = vec![Vec::new(); events.len()];
    let mut fresh: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(events.len());
    let mut m = mem.clone();
    for (k, e) in events.iter().enumerate() {
        let (si, sj) = (m.state(e.src).to_vec(), m.state(e.dst).to_vec());
        let di = e.timestamp - m.last_update(e.src);
        let dj = e.timestamp - m.last_update(e.dst);
        let mi = message_fn(model, &si, &sj, &e.features, di)?;
        let mj = message_fn(model, &sj, &si, &e.features, dj)?;
        let ni = memory_update(model, &si, mi.data())?;
        let nj = memory_update(model, &sj, mj.data())?;
        m.write(e.src, ni.data(), e.timestamp)?;
        m.write(e.dst, nj.data(), e.timestamp)?;
        for &l in &dependents[k] {
            let f = &events[l];
            stale[l].push((m.state(f.src).to_vec(), m.state(f.dst).to_vec()));
        }
        fresh.push((m.state(e.src).to_vec(), m.state(e.dst).to_vec()));
    }
    let mut out = Vec::with_capacity(events.len());
    for (l, (fi, fj)) in fresh.iter().enumerate() {
        if stale[l].is_empty() {
            out.push(EventCoherence::NoPending);
            continue;
        }
        let g_fresh = pair_loss_gradient(model, fi, fj)?;
        let mut mu: Option<f64> = None;
        let mut undefined = false;
        for (si, sj) in &stale[l] {
            let g_stale = pair_loss_gradient(model, si, sj)?;
            match coherence_ratio(&g_stale, &g_fresh)? {
                Some(r) => mu = Some(mu.map_or(r, |m| m.min(r))),
                None => undefined = true,
            }
        }
        out.push(match (undefined, mu) {
            (false, Some(mu)) => EventCoherence::Defined(mu),
            _ => EventCoherence::Undefined,
        });
    }
    Ok(BatchCoherence {
        batch_index: batch.index(),
        events: out,
    })
}

pub fn write_coherence_csv(w: impl Write, batches: &[BatchCoherence]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record([
        "batch_index",
        "min_coherence",
        "mean_coherence",
        "frac_undefined",
    ])
    .map_err(io)?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    for b in batches {
        out.write_record([
            b.batch_index.to_string(),
            opt(b.min()),
            opt(b.mean()),
            b.frac_undefined().to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean of the batch minima, a rough estimate of the coherence lower bound.
pub fn estimate_coherence_bound(batches: &[BatchCoherence]) -> Option<f64> {
    let mins: Vec<f64> = batches.iter().filter_map(BatchCoherence::min).collect();
    (!mins.is_empty()).then(|| mins.iter().sum::<f64>() / mins.len() as f64)
}

/// Replays `stream` in lag-one order from zero memory and measures the
/// coherence of up to `max_batches` evenly spaced batches, each against the
/// memory committed just before it is scored.
pub fn coherence_over_stream(
    model: &Model,
    stream: &EventStream,
    hyper: &Hyperparams,
    pres: Option<PresView<'_>>,
    max_batches: usize,
) -> Result<Vec<BatchCoherence>> {
    let batches = partition_batches(stream, hyper.batch_size)?;
    if batches.is_empty() || max_batches == 0 {
        return Ok(Vec::new());
    }
    let stride = batches.len().div_ceil(max_batches);
    let mut model = model.clone();
    let mut mem = MemoryStore::new(stream.num_vertices(), hyper.memory_dim, hyper.neighbor_cap);
    let mut tracker = pres.map(|p| {
        let mut t = p.tracker.clone();
        t.reset();
        t
    });
    let gate = pres.map(|p| p.gate.clone());
    let clock = pres.map_or(PredictionClock::default(), |p| p.clock);
    let empty = TemporalBatch::empty();
    let mut prev = &empty;
    let mut out = Vec::new();
    for cur in &batches {
        let hooks = match (&tracker, &gate) {
            (Some(t), Some(g)) => Some(PresHooks {
                tracker: t,
                gate: g,
                beta: 0.0,
                clock,
            }),
            _ => None,
        };
        let (step, _, plan) = run_step(
            &mut model,
            &mut mem,
            prev,
            cur,
            hyper.memory_update_source,
            hooks,
            false,
        )?;
        if let Some(t) = tracker.as_mut() {
            update_tracker_from(t, &plan, &step)?;
        }
        if cur.index() % stride == 0 {
            out.push(empirical_memory_coherence(&model, cur, &mem)?);
        }
        prev = cur;
    }
    Ok(out)
}
