use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::{partition_batches, sample_negatives, EventStream, TemporalBatch};
use crate::mdgnn::step::run_step;
use crate::mdgnn::{Hyperparams, MemoryStore, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceEstimate {
    pub batch_size: usize,
    /// Sum over coordinates of the sample variance across redraws.
    pub trace_variance: f64,
    pub mean_grad_norm: f64,
    pub resamples: usize,
}

const PROBE_TAG: u64 = 0x7072_6f62;

/// Full-epoch gradient (sum of per-batch gradients) at the model's current
/// parameters, with memory starting from zero.
pub fn epoch_gradient(
    model: &Model,
    stream: &EventStream,
    hyper: &Hyperparams,
    batches: &[TemporalBatch],
) -> Result<Vec<f64>> {
    let mut m = model.clone();
    m.params_mut().zero_grads();
    let mut mem = MemoryStore::new(stream.num_vertices(), hyper.memory_dim, hyper.neighbor_cap);
    let empty = TemporalBatch::empty();
    let mut prev = &empty;
    for cur in batches {
        run_step(
            &mut m,
            &mut mem,
            prev,
            cur,
            hyper.memory_update_source,
            None,
            true,
        )?;
        prev = cur;
    }
    Ok(m.params().flat_grad())
}

/// For each batch size, redraws the negatives `resamples` times with the
/// parameters held fixed and reports the spread of the epoch gradient.
pub fn epoch_variance_probe(
    model: &Model,
    stream: &EventStream,
    hyper: &Hyperparams,
    batch_sizes: &[usize],
    resamples: usize,
    seed: u64,
) -> Result<Vec<VarianceEstimate>> {
    if resamples < 20 {
        return Err(Error::arg(format!(
            "variance probe needs at least 20 redraws, got {resamples}"
        )));
    }
    if batch_sizes.contains(&0) {
        return Err(Error::arg("batch sizes must be positive"));
    }
    let mut out = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let base = partition_batches(stream, b)?;
        let grads: Vec<Vec<f64>> = (0..resamples)
            .into_par_iter()
            .map(|r| {
                let batches: Vec<TemporalBatch> = base
                    .iter()
                    .map(|batch| {
                        let s = crate::seed::derive(
                            seed,
                            &[PROBE_TAG, b as u64, r as u64, batch.index() as u64],
                        );
                        sample_negatives(batch, stream, &hyper.negatives, s)
                    })
                    .collect::<Result<_>>()?;
                epoch_gradient(model, stream, hyper, &batches)
            })
            .collect::<Result<_>>()?;
        let p = grads[0].len();
        let n = grads.len() as f64;
        let mut trace = 0.0;
        for k in 0..p {
            let m = grads.iter().map(|g| g[k]).sum::<f64>() / n;
            trace += grads.iter().map(|g| (g[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
        }
        let mean_grad_norm = grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / n;
        out.push(VarianceEstimate {
            batch_size: b,
            trace_variance: trace,
            mean_grad_norm,
            resamples,
        });
    }
    Ok(out)
}

pub fn write_variance_csv(w: impl std::io::Write, rows: &[VarianceEstimate]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record([
        "batch_size",
        "trace_variance",
        "mean_grad_norm",
        "resamples",
    ])
    .map_err(io)?;
    for r in rows {
        out.write_record([
            r.batch_size.to_string(),
            r.trace_variance.to_string(),
            r.mean_grad_norm.to_string(),
            r.resamples.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
