use std::collections::HashMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::event::{Event, Polarity, TemporalBatch};
use crate::mdgnn::model::{time_encoding, Net};
use crate::mdgnn::{EmbeddingMode, MemoryStore, MemoryUpdateSource, Model};
use crate::numerics::{Bindings, Gradients, Tape, Tensor, Var};
use crate::pres::{
    predict_memory_after, smoothing_term, FusionGate, GmmTracker, PredictionClock, PresView,
};

/// Memory writes derived from the previous batch: one per touched vertex,
/// taken from that vertex's most recent event.
#[derive(Clone, Debug)]
pub(crate) struct Plan {
    pub vertices: Vec<usize>,
    pub times: Vec<f64>,
    /// Time since each planned vertex's previous write.
    pub elapsed: Vec<f64>,
    /// Events of each planned vertex folded into this write.
    pub folded: Vec<f64>,
    pub polarity: Vec<Polarity>,
    pub inputs: Tensor,
    pub prev_states: Tensor,
    pub new_neighbors: HashMap<usize, Vec<usize>>,
}

struct Candidate<'a> {
    key: (f64, usize, usize),
    other: usize,
    event: &'a Event,
}

fn later(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .is_ge()
}

pub(crate) fn plan_updates(
    model: &Model,
    mem: &MemoryStore,
    prev: &TemporalBatch,
    source: MemoryUpdateSource,
) -> Result<Plan> {
    let ds = model.memory_dim();
    let mut best: HashMap<usize, Candidate> = HashMap::new();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut offer = |v: usize, other: usize, key, event| {
        *counts.entry(v).or_default() += 1;
        let c = Candidate { key, other, event };
        match best.get(&v) {
            Some(cur) if !later(key, cur.key) => {}
            _ => {
                best.insert(v, c);
            }
        }
    };
    for (k, e) in prev.positives().iter().enumerate() {
        let key = (e.timestamp, k, 0);
        offer(e.src, e.dst, key, e);
        offer(e.dst, e.src, key, e);
    }
    if source == MemoryUpdateSource::PositivesAndNegatives {
        for (j, (e, &o)) in prev
            .negatives()
            .iter()
            .zip(prev.negative_origin())
            .enumerate()
        {
            let key = (e.timestamp, o, 1 + j);
            offer(e.src, e.dst, key, e);
            offer(e.dst, e.src, key, e);
        }
    }
    let mut vertices: Vec<usize> = best.keys().copied().collect();
    vertices.sort_unstable();

    let width = model.message_input_width();
    let mut inputs = Vec::with_capacity(vertices.len() * width);
    let mut prev_states = Vec::with_capacity(vertices.len() * ds);
    let mut times = Vec::with_capacity(vertices.len());
    let mut elapsed = Vec::with_capacity(vertices.len());
    let mut folded = Vec::with_capacity(vertices.len());
    let mut polarity = Vec::with_capacity(vertices.len());
    for &v in &vertices {
        let c = &best[&v];
        if v >= mem.num_vertices() || c.other >= mem.num_vertices() {
            return Err(Error::arg(format!(
                "event vertex outside {} vertices",
                mem.num_vertices()
            )));
        }
        if c.event.features.len() != model.feature_dim() {
            return Err(Error::dim(format!(
                "event has {} features, model expects {}",
                c.event.features.len(),
                model.feature_dim()
            )));
        }
        let dt = c.event.timestamp - mem.last_update(v);
        if dt < 0.0 {
            return Err(Error::arg(format!(
                "batch order violated: vertex {v} event at {} before its last update {}",
                c.event.timestamp,
                mem.last_update(v)
            )));
        }
        inputs.extend_from_slice(mem.state(v));
        inputs.extend_from_slice(mem.state(c.other));
        inputs.extend_from_slice(&c.event.features);
        inputs.push(time_encoding(dt));
        prev_states.extend_from_slice(mem.state(v));
        times.push(c.event.timestamp);
        elapsed.push(dt);
        folded.push(counts[&v] as f64);
        polarity.push(c.event.polarity);
    }

    let mut new_neighbors: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in prev.positives() {
        new_neighbors.entry(e.src).or_default().push(e.dst);
        new_neighbors.entry(e.dst).or_default().push(e.src);
    }

    let n = vertices.len();
    Ok(Plan {
        vertices,
        times,
        elapsed,
        folded,
        polarity,
        inputs: Tensor::new(n, width, inputs)?,
        prev_states: Tensor::new(n, ds, prev_states)?,
        new_neighbors,
    })
}

impl Plan {
    pub fn commit(&self, mem: &mut MemoryStore, new_states: &Tensor) -> Result<()> {
        for (k, &v) in self.vertices.iter().enumerate() {
            mem.write(v, new_states.row(k), self.times[k])?;
        }
        let mut touched: Vec<usize> = self.new_neighbors.keys().copied().collect();
        touched.sort_unstable();
        for v in touched {
            for &u in &self.new_neighbors[&v] {
                mem.push_neighbor(v, u);
            }
        }
        Ok(())
    }

    fn position(&self, v: usize) -> Option<usize> {
        self.vertices.binary_search(&v).ok()
    }

    fn last_update_after(&self, mem: &MemoryStore, v: usize) -> f64 {
        self.position(v)
            .map_or(mem.last_update(v), |k| self.times[k])
    }

    fn neighbors_after(&self, mem: &MemoryStore, v: usize) -> Vec<usize> {
        let mut all: Vec<usize> = mem.neighbors(v).collect();
        if let Some(extra) = self.new_neighbors.get(&v) {
            all.extend_from_slice(extra);
        }
        let cap = mem.neighbor_cap();
        let skip = all.len().saturating_sub(cap);
        all.split_off(skip)
    }
}

/// Prediction-correction settings for one step.
#[derive(Clone, Copy)]
pub(crate) struct PresHooks<'a> {
    pub tracker: &'a GmmTracker,
    pub gate: &'a FusionGate,
    pub beta: f64,
    pub clock: PredictionClock,
}

impl<'a> PresHooks<'a> {
    pub fn view(v: PresView<'a>, beta: f64) -> Self {
        Self {
            tracker: v.tracker,
            gate: v.gate,
            beta,
            clock: v.clock,
        }
    }
}

/// Result of one lag-one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// Summed binary cross-entropy over the current batch.
    pub loss: f64,
    /// Smoothing term `β[1 − cos]`, zero without prediction-correction.
    pub penalty: f64,
    pub num_positives: usize,
    /// Logits for the current positives followed by its negatives.
    pub logits: Vec<f64>,
    pub src_embeddings: Tensor,
    pub dst_embeddings: Tensor,
    /// Vertices written from the previous batch, ascending.
    pub updated: Vec<usize>,
    /// Rows written to memory for `updated`.
    pub new_states: Tensor,
    /// Memory-cell output before fusion.
    pub raw_states: Tensor,
    /// Predicted rows, with prediction-correction only.
    pub predicted: Option<Tensor>,
    /// Wall-clock spent in prediction, fusion, smoothing and tracker work.
    pub pres_seconds: f64,
}

impl StepOutput {
    pub fn total(&self) -> f64 {
        self.loss + self.penalty
    }

    pub fn labels(&self) -> Vec<f64> {
        (0..self.logits.len())
            .map(|k| if k < self.num_positives { 1.0 } else { 0.0 })
            .collect()
    }
}

pub(crate) struct Forward {
    pub tape: Tape,
    pub bind: Bindings,
    pub total: Var,
    pub gamma_raw: Option<Var>,
    pub plan: Plan,
    pub out: StepOutput,
}

pub(crate) fn forward(
    model: &Model,
    mem: &MemoryStore,
    prev: &TemporalBatch,
    cur: &TemporalBatch,
    source: MemoryUpdateSource,
    pres: Option<PresHooks<'_>>,
) -> Result<Forward> {
    if cur.is_empty() {
        return Err(Error::arg("current batch has no positives"));
    }
    if !prev.is_empty() && cur.interval().0 < prev.interval().1 {
        return Err(Error::arg(format!(
            "batch order violated: batch starting at {} follows one ending at {}",
            cur.interval().0,
            prev.interval().1
        )));
    }
    if mem.dim() != model.memory_dim() {
        return Err(Error::dim(format!(
            "memory width {} vs model {}",
            mem.dim(),
            model.memory_dim()
        )));
    }
    let ds = model.memory_dim();
    let plan = plan_updates(model, mem, prev, source)?;
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let mut pres_seconds = 0.0;

    let mut gamma_raw = None;
    let mut predicted = None;
    let mut penalty_var = None;
    let (raw_var, new_var) = if plan.vertices.is_empty() {
        (None, None)
    } else {
        let x = tape.leaf(plan.inputs.clone());
        let m = net.message(&mut tape, x)?;
        let s_prev = tape.leaf(plan.prev_states.clone());
        let s_raw = net.gru(&mut tape, s_prev, m)?;
        let s_new = match pres {
            None => s_raw,
            Some(h) => {
                let clock = Instant::now();
                let hat = predict_rows(h.tracker, mem, &plan, h.clock)?;
                let hat_var = tape.leaf(hat.clone());
                predicted = Some(hat);
                let g = match h.gate.pinned_value() {
                    Some(g) => tape.leaf(Tensor::scalar(g)),
                    None => {
                        let raw = tape.leaf(Tensor::scalar(h.gate.raw()));
                        gamma_raw = Some(raw);
                        tape.sigmoid(raw)?
                    }
                };
                let one_minus_g = tape.affine(g, -1.0, 1.0)?;
                let a = tape.scale_by(hat_var, one_minus_g)?;
                let b = tape.scale_by(s_raw, g)?;
                let fused = tape.add(a, b)?;
                if h.beta > 0.0 {
                    penalty_var = smoothing_term(&mut tape, &plan.prev_states, fused, h.beta)?;
                }
                pres_seconds += clock.elapsed().as_secs_f64();
                fused
            }
        };
        (Some(s_raw), Some(s_new))
    };

    // Memory rows visible to the current batch: fresh rows first, then
    // untouched rows as constants.
    let events: Vec<&Event> = cur.positives().iter().chain(cur.negatives()).collect();
    let mut needed: Vec<usize> = Vec::new();
    let mut neighbor_lists: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in &events {
        for v in [e.src, e.dst] {
            if v >= mem.num_vertices() {
                return Err(Error::arg(format!(
                    "vertex {v} outside {} vertices",
                    mem.num_vertices()
                )));
            }
            needed.push(v);
            if model.embedding_mode() == EmbeddingMode::NeighborMean
                && !neighbor_lists.contains_key(&v)
            {
                let nb = plan.neighbors_after(mem, v);
                needed.extend_from_slice(&nb);
                neighbor_lists.insert(v, nb);
            }
        }
    }
    needed.sort_unstable();
    needed.dedup();
    let mut row_of: HashMap<usize, usize> = HashMap::with_capacity(needed.len());
    for (k, &v) in plan.vertices.iter().enumerate() {
        row_of.insert(v, k);
    }
    let stale: Vec<usize> = needed
        .into_iter()
        .filter(|v| plan.position(*v).is_none())
        .collect();
    let mut stale_rows = Vec::with_capacity(stale.len() * ds);
    for (k, &v) in stale.iter().enumerate() {
        row_of.insert(v, plan.vertices.len() + k);
        stale_rows.extend_from_slice(mem.state(v));
    }
    let memory = match (new_var, stale.is_empty()) {
        (Some(fresh), true) => fresh,
        (Some(fresh), false) => {
            let c = tape.leaf(Tensor::new(stale.len(), ds, stale_rows)?);
            tape.concat_rows(&[fresh, c])?
        }
        (None, _) => tape.leaf(Tensor::new(stale.len(), ds, stale_rows)?),
    };

    let side = |tape: &mut Tape, pick: &dyn Fn(&Event) -> usize| -> Result<Var> {
        let verts: Vec<usize> = events.iter().map(|e| pick(e)).collect();
        let rows: Vec<usize> = verts.iter().map(|v| row_of[v]).collect();
        let g = tape.gather(memory, &rows)?;
        let (factor, nmean) = match model.embedding_mode() {
            EmbeddingMode::Identity => (None, None),
            EmbeddingMode::TimeProjection => {
                let mut f = Vec::with_capacity(verts.len() * ds);
                for (e, &v) in events.iter().zip(&verts) {
                    let dt = e.timestamp - plan.last_update_after(mem, v);
                    if dt < 0.0 {
                        return Err(Error::arg(format!(
                            "batch order violated: vertex {v} scored at {} before its last update",
                            e.timestamp
                        )));
                    }
                    f.extend(std::iter::repeat_n(1.0 + time_encoding(dt), ds));
                }
                (Some(tape.leaf(Tensor::new(verts.len(), ds, f)?)), None)
            }
            EmbeddingMode::NeighborMean => {
                let groups: Vec<Vec<usize>> = verts
                    .iter()
                    .map(|v| neighbor_lists[v].iter().map(|u| row_of[u]).collect())
                    .collect();
                (None, Some(tape.row_mean(memory, &groups)?))
            }
        };
        net.embed(tape, g, factor, nmean)
    };
    let hs = side(&mut tape, &|e| e.src)?;
    let hd = side(&mut tape, &|e| e.dst)?;
    let logits = net.decode(&mut tape, hs, hd)?;
    let labels: Vec<f64> = (0..events.len())
        .map(|k| if k < cur.len() { 1.0 } else { 0.0 })
        .collect();
    let loss = tape.bce_with_logits(logits, &labels)?;
    let total = match penalty_var {
        Some(p) => tape.add(loss, p)?,
        None => loss,
    };

    let empty = || Tensor::zeros(0, ds);
    let out = StepOutput {
        loss: tape.value(loss).item(),
        penalty: penalty_var.map_or(0.0, |p| tape.value(p).item()),
        num_positives: cur.len(),
        logits: tape.value(logits).data().to_vec(),
        src_embeddings: tape.value(hs).clone(),
        dst_embeddings: tape.value(hd).clone(),
        updated: plan.vertices.clone(),
        new_states: new_var.map_or_else(empty, |v| tape.value(v).clone()),
        raw_states: raw_var.map_or_else(empty, |v| tape.value(v).clone()),
        predicted,
        pres_seconds,
    };
    Ok(Forward {
        bind: net.bind,
        tape,
        total,
        gamma_raw,
        plan,
        out,
    })
}

impl Forward {
    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(self.total)
    }
}

/// Predicted rows `s + elapsed·δ̂` for every planned vertex.
fn predict_rows(
    tracker: &GmmTracker,
    mem: &MemoryStore,
    plan: &Plan,
    clock: PredictionClock,
) -> Result<Tensor> {
    let ds = mem.dim();
    let mut out = Vec::with_capacity(plan.vertices.len() * ds);
    for (k, &v) in plan.vertices.iter().enumerate() {
        let elapsed = match clock {
            PredictionClock::Events => plan.folded[k],
            PredictionClock::Timestamps => plan.elapsed[k],
        };
        let row = predict_memory_after(v, tracker, mem, elapsed, Some(plan.polarity[k]))?;
        out.extend_from_slice(&row);
    }
    Tensor::new(plan.vertices.len(), ds, out)
}

/// Runs one step, writes the new memory rows and accumulates parameter
/// gradients into the model. Returns the step output and, for a learnable
/// gate, the gradient with respect to its raw parameter.
pub(crate) fn run_step(
    model: &mut Model,
    mem: &mut MemoryStore,
    prev: &TemporalBatch,
    cur: &TemporalBatch,
    source: MemoryUpdateSource,
    pres: Option<PresHooks<'_>>,
    with_grad: bool,
) -> Result<(StepOutput, Option<f64>, Plan)> {
    let fwd = forward(model, mem, prev, cur, source, pres)?;
    let (grads, bind) = if with_grad {
        (Some(fwd.backward()?), Some(fwd.bind.clone()))
    } else {
        (None, None)
    };
    let gamma_grad = match (&grads, fwd.gamma_raw) {
        (Some(g), Some(v)) => Some(g.wrt(v).map_or(0.0, Tensor::item)),
        _ => None,
    };
    fwd.plan.commit(mem, &fwd.out.new_states)?;
    let Forward { out, plan, .. } = fwd;
    if let (Some(g), Some(b)) = (grads, bind) {
        b.accumulate(&g, model.params_mut());
    }
    Ok((out, gamma_grad, plan))
}
