use crate::error::{Error, Result};
use crate::event::{EventStream, TemporalBatch};
use crate::mdgnn::model::Net;
use crate::mdgnn::step::{run_step, PresHooks};
use crate::mdgnn::train::{
    average_precision, collect_scores, prepare_batches, run_epoch, PresState,
};
use crate::mdgnn::{EpochStats, Hyperparams, MemoryStore, MemoryUpdateSource, Model};
use crate::numerics::{Tape, Tensor};
use crate::pres::{smoothing_term, FusionGate, GmmTracker, PresConfig, PresView, TrackerPolicy};

/// One epoch with prediction-correction and smoothing. The tracker is
/// cleared first under [`TrackerPolicy::Reset`].
#[allow(clippy::too_many_arguments)]
pub fn train_epoch_pres(
    model: &mut Model,
    mem: &mut MemoryStore,
    stream: &EventStream,
    hyper: &Hyperparams,
    tracker: &mut GmmTracker,
    gate: &mut FusionGate,
    cfg: &PresConfig,
    epoch: usize,
) -> Result<EpochStats> {
    cfg.validate()?;
    if cfg.tracker_policy == TrackerPolicy::Reset {
        tracker.reset();
    }
    let batches = prepare_batches(stream, hyper, epoch)?;
    let state = PresState {
        tracker,
        gate,
        beta: cfg.beta,
        clock: cfg.clock,
    };
    Ok(run_epoch(model, mem, &batches, hyper, epoch, Some(state), |_, _| {})?.stats)
}

/// Gradient of one step's objective with the tracker and gate held fixed.
#[derive(Clone, Debug)]
pub struct PresGradient {
    pub total: f64,
    pub params: Vec<f64>,
    /// `None` for a pinned gate.
    pub gamma_raw: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn batch_gradient_pres(
    model: &Model,
    mem: &MemoryStore,
    pres: PresView<'_>,
    beta: f64,
    prev: &TemporalBatch,
    cur: &TemporalBatch,
    source: MemoryUpdateSource,
) -> Result<PresGradient> {
    let mut m = model.clone();
    m.params_mut().zero_grads();
    let mut scratch = mem.clone();
    let hooks = PresHooks::view(pres, beta);
    let (out, gamma_raw, _) = run_step(&mut m, &mut scratch, prev, cur, source, Some(hooks), true)?;
    Ok(PresGradient {
        total: out.total(),
        params: m.params().flat_grad(),
        gamma_raw,
    })
}

/// Average precision with fusion applied during evaluation. Memory and the
/// tracker advance on copies; no smoothing term is computed.
pub fn evaluate_ap_pres(
    model: &Model,
    mem: &MemoryStore,
    pres: PresView<'_>,
    prev: &TemporalBatch,
    eval: &[TemporalBatch],
    source: MemoryUpdateSource,
) -> Result<f64> {
    let (scores, labels) = collect_scores(model, mem, Some(pres), prev, eval, source)?;
    average_precision(&scores, &labels)
}

/// Value and gradients of a stand-alone fused objective.
#[derive(Clone, Debug)]
pub struct FusedObjective {
    pub total: f64,
    pub d_gamma_raw: f64,
    pub d_s_raw: Tensor,
}

/// `Σ BCE(decode(s̄_i, s̄_j), y) + β[1 − cos(S_prev, s̄)]` with
/// `s̄ = (1 − σ(g))·ŝ + σ(g)·s_raw`. Links index rows of `s̄`; memory rows
/// are decoded through the plain embedding.
pub fn objective_with_grad(
    model: &Model,
    s_prev: &Tensor,
    s_hat: &Tensor,
    s_raw: &Tensor,
    gamma_raw: f64,
    beta: f64,
    links: &[(usize, usize, f64)],
) -> Result<FusedObjective> {
    if s_hat.shape() != s_raw.shape() || s_prev.shape() != s_raw.shape() {
        return Err(Error::dim(
            "fused objective needs equally shaped memory matrices",
        ));
    }
    if s_raw.cols() != model.memory_dim() {
        return Err(Error::dim(format!(
            "memory width {} vs model {}",
            s_raw.cols(),
            model.memory_dim()
        )));
    }
    if links.is_empty() {
        return Err(Error::arg("fused objective needs at least one link"));
    }
    if links
        .iter()
        .any(|&(i, j, _)| i >= s_raw.rows() || j >= s_raw.rows())
    {
        return Err(Error::arg("link row out of range"));
    }
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let hat = tape.leaf(s_hat.clone());
    let raw = tape.leaf(s_raw.clone());
    let g_raw = tape.leaf(Tensor::scalar(gamma_raw));
    let g = tape.sigmoid(g_raw)?;
    let one_minus_g = tape.affine(g, -1.0, 1.0)?;
    let a = tape.scale_by(hat, one_minus_g)?;
    let b = tape.scale_by(raw, g)?;
    let fused = tape.add(a, b)?;
    let src: Vec<usize> = links.iter().map(|l| l.0).collect();
    let dst: Vec<usize> = links.iter().map(|l| l.1).collect();
    let labels: Vec<f64> = links.iter().map(|l| l.2).collect();
    let rs = tape.gather(fused, &src)?;
    let rd = tape.gather(fused, &dst)?;
    let hs = net.embed_plain(&mut tape, rs)?;
    let hd = net.embed_plain(&mut tape, rd)?;
    let z = net.decode(&mut tape, hs, hd)?;
    let mut total = tape.bce_with_logits(z, &labels)?;
    if let Some(p) = smoothing_term(&mut tape, s_prev, fused, beta)? {
        total = tape.add(total, p)?;
    }
    let grads = tape.backward(total)?;
    Ok(FusedObjective {
        total: tape.value(total).item(),
        d_gamma_raw: grads.wrt(g_raw).map_or(0.0, Tensor::item),
        d_s_raw: grads
            .wrt(raw)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(s_raw.rows(), s_raw.cols())),
    })
}
