use crate::error::{Error, Result};
use crate::event::Polarity;
use crate::mdgnn::MemoryStore;
use crate::numerics::{Tape, Tensor, Var};
use crate::pres::{FusionGate, GmmTracker};

/// Norm below which the smoothing term is dropped.
pub const ZERO_NORM_GUARD: f64 = 1e-12;

/// `ŝ = s(t1) + (t2 − t1)·δ̂` with `t1` the vertex's last update.
///
/// `δ̂` is the component mean for a known event type, the mixture mean for
/// `None`, and zero for a component without observations.
pub fn predict_memory(
    v: usize,
    tracker: &GmmTracker,
    mem: &MemoryStore,
    t2: f64,
    event_type: Option<Polarity>,
) -> Result<Vec<f64>> {
    if v >= mem.num_vertices() {
        return Err(Error::arg(format!("vertex {v} outside the memory store")));
    }
    let t1 = mem.last_update(v);
    if t2 < t1 {
        return Err(Error::arg(format!(
            "prediction time {t2} precedes last update {t1}"
        )));
    }
    predict_memory_after(v, tracker, mem, t2 - t1, event_type)
}

/// `s(t1) + elapsed·δ̂`, for an elapsed time measured on any clock.
pub fn predict_memory_after(
    v: usize,
    tracker: &GmmTracker,
    mem: &MemoryStore,
    elapsed: f64,
    event_type: Option<Polarity>,
) -> Result<Vec<f64>> {
    if v >= mem.num_vertices() || v >= tracker.num_vertices() {
        return Err(Error::arg(format!("vertex {v} outside the memory store")));
    }
    if tracker.dim() != mem.dim() {
        return Err(Error::dim(format!(
            "tracker width {} vs memory {}",
            tracker.dim(),
            mem.dim()
        )));
    }
    if elapsed.is_nan() || elapsed < 0.0 {
        return Err(Error::arg(format!("negative elapsed time {elapsed}")));
    }
    let delta = match event_type {
        Some(j) => tracker.mean(v, j),
        None => tracker.mixture_mean(v),
    };
    Ok(mem
        .state(v)
        .iter()
        .zip(&delta)
        .map(|(s, d)| s + elapsed * d)
        .collect())
}

/// `s̄ = (1 − γ)·ŝ + γ·s_raw`
pub fn correct_memory(predicted: &[f64], raw: &[f64], gate: &FusionGate) -> Result<Vec<f64>> {
    if predicted.len() != raw.len() {
        return Err(Error::dim(format!(
            "fusion of {} and {}",
            predicted.len(),
            raw.len()
        )));
    }
    let g = gate.gamma();
    Ok(predicted
        .iter()
        .zip(raw)
        .map(|(p, r)| (1.0 - g) * p + g * r)
        .collect())
}

/// `β[1 − ⟨P/‖P‖, S/‖S‖⟩]` over flattened matrices; zero when either norm
/// is below [`ZERO_NORM_GUARD`].
pub fn coherence_penalty(s_prev: &Tensor, s_new: &Tensor, beta: f64) -> Result<f64> {
    if s_prev.shape() != s_new.shape() {
        return Err(Error::dim(format!(
            "smoothing: {:?} vs {:?}",
            s_prev.shape(),
            s_new.shape()
        )));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::arg(format!("beta must be non-negative, got {beta}")));
    }
    let (pn, sn) = (s_prev.norm(), s_new.norm());
    if pn < ZERO_NORM_GUARD || sn < ZERO_NORM_GUARD {
        return Ok(0.0);
    }
    let cos = s_prev
        .data()
        .iter()
        .zip(s_new.data())
        .map(|(a, b)| (a / pn) * (b / sn))
        .sum::<f64>();
    Ok(beta * (1.0 - cos))
}

/// Prediction loss plus the smoothing penalty.
pub fn coherence_loss(
    prediction_loss: f64,
    s_prev: &Tensor,
    s_new: &Tensor,
    beta: f64,
) -> Result<f64> {
    Ok(prediction_loss + coherence_penalty(s_prev, s_new, beta)?)
}

/// Records the smoothing penalty on a tape, differentiable in `s_new` with
/// `s_prev` held constant. `None` when either norm is below the guard.
pub fn smoothing_term(
    tape: &mut Tape,
    s_prev: &Tensor,
    s_new: Var,
    beta: f64,
) -> Result<Option<Var>> {
    if tape.shape(s_new) != s_prev.shape() {
        return Err(Error::dim(format!(
            "smoothing: {:?} vs {:?}",
            s_prev.shape(),
            tape.shape(s_new)
        )));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::arg(format!("beta must be non-negative, got {beta}")));
    }
    let pn = s_prev.norm();
    let sn = tape.value(s_new).norm();
    if pn < ZERO_NORM_GUARD || sn < ZERO_NORM_GUARD {
        return Ok(None);
    }
    let unit_prev = tape.leaf(s_prev.map(|x| x / pn));
    let d = tape.dot(unit_prev, s_new)?;
    let norm = tape.l2_norm(s_new)?;
    let cos = tape.div_by(d, norm)?;
    Ok(Some(tape.affine(cos, -beta, beta)?))
}
