use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity, TemporalBatch};

/// Where corrupted destinations are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NegativePool {
    #[default]
    AllVertices,
    /// Only vertices that appear as a destination somewhere in the stream.
    ObservedDestinations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeBudget {
    /// `k` negatives for every positive.
    PerPositive(usize),
    /// A fixed number of negatives per batch, each attached to a uniformly
    /// chosen positive.
    PerBatch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegativeConfig {
    pub budget: NegativeBudget,
    pub pool: NegativePool,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            budget: NegativeBudget::PerPositive(1),
            pool: NegativePool::AllVertices,
        }
    }
}

impl NegativeConfig {
    pub fn per_positive(k: usize) -> Self {
        Self {
            budget: NegativeBudget::PerPositive(k),
            ..Self::default()
        }
    }
}

/// Destination corruption: keeps each positive's source, timestamp and
/// features, and draws a destination uniformly from the pool, rejecting
/// `dst == src` and any unordered pair with a positive event inside the
/// batch interval.
pub fn sample_negatives(
    batch: &TemporalBatch,
    stream: &EventStream,
    cfg: &NegativeConfig,
    seed: u64,
) -> Result<TemporalBatch> {
    if batch.is_empty() {
        return Err(Error::arg("cannot sample negatives for an empty batch"));
    }
    let count = match cfg.budget {
        NegativeBudget::PerPositive(0) | NegativeBudget::PerBatch(0) => {
            return Err(Error::arg("negative count must be at least 1"));
        }
        NegativeBudget::PerPositive(k) => k * batch.len(),
        NegativeBudget::PerBatch(c) => c,
    };
    let pool: Vec<usize> = match cfg.pool {
        NegativePool::AllVertices => (0..stream.num_vertices()).collect(),
        NegativePool::ObservedDestinations => {
            let mut d: Vec<usize> = stream.events().iter().map(|e| e.dst).collect();
            d.sort_unstable();
            d.dedup();
            d
        }
    };
    if pool.is_empty() {
        return Err(Error::arg("negative pool is empty"));
    }

    let (lo, hi) = batch.interval();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let occupied: HashSet<(usize, usize)> = stream.events()[stream.time_range(lo, hi)]
        .iter()
        .chain(batch.positives())
        .map(|e| key(e.src, e.dst))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_draws = 10 * stream.num_vertices().max(1);
    let mut negatives = Vec::with_capacity(count);
    let mut origin = Vec::with_capacity(count);
    for n in 0..count {
        let k = match cfg.budget {
            NegativeBudget::PerPositive(per) => n / per,
            NegativeBudget::PerBatch(_) => rng.random_range(0..batch.len()),
        };
        let pos = &batch.positives()[k];
        let mut draws = 0;
        let dst = loop {
            if draws == max_draws {
                return Err(Error::Saturation {
                    src: pos.src,
                    attempts: draws,
                });
            }
            draws += 1;
            let cand = pool[rng.random_range(0..pool.len())];
            if cand != pos.src && !occupied.contains(&key(pos.src, cand)) {
                break cand;
            }
        };
        negatives.push(Event {
            src: pos.src,
            dst,
            timestamp: pos.timestamp,
            features: pos.features.clone(),
            polarity: Polarity::Negative,
        });
        origin.push(k);
    }
    Ok(batch.with_negatives(negatives, origin))
}
