//! Prediction-correction of memory updates and memory-coherence smoothing.

mod coherence;
mod gate;
mod smoothing;
mod tracker;
mod train;

use std::str::FromStr;

use crate::error::{Error, Result};

pub use coherence::{
    coherence_over_stream, coherence_ratio, empirical_memory_coherence, estimate_coherence_bound,
    pair_loss_gradient, write_coherence_csv, BatchCoherence, EventCoherence,
};
pub use gate::FusionGate;
pub use smoothing::{
    coherence_loss, coherence_penalty, correct_memory, predict_memory, predict_memory_after,
    smoothing_term, ZERO_NORM_GUARD,
};
pub use tracker::GmmTracker;
pub use train::{
    batch_gradient_pres, evaluate_ap_pres, objective_with_grad, train_epoch_pres, FusedObjective,
    PresGradient,
};

/// How elapsed time is measured when extrapolating a memory state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PredictionClock {
    /// Number of the vertex's events folded into the current write.
    #[default]
    Events,
    /// Timestamp difference since the vertex's previous write.
    Timestamps,
}

impl FromStr for PredictionClock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "events" => Ok(Self::Events),
            "timestamps" => Ok(Self::Timestamps),
            _ => Err(Error::arg(format!("unknown prediction clock {s:?}"))),
        }
    }
}

/// Read-only view of a prediction-correction state, for evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PresView<'a> {
    pub tracker: &'a GmmTracker,
    pub gate: &'a FusionGate,
    pub clock: PredictionClock,
}

/// Whether tracker statistics survive from one epoch to the next.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrackerPolicy {
    #[default]
    Reset,
    Persist,
}

impl FromStr for TrackerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reset" => Ok(Self::Reset),
            "persist" => Ok(Self::Persist),
            _ => Err(Error::arg(format!("unknown tracker policy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresConfig {
    /// Smoothing strength.
    pub beta: f64,
    pub gamma_init: f64,
    /// Fixes `γ` instead of learning it.
    pub pin_gamma: Option<f64>,
    pub tracker_policy: TrackerPolicy,
    pub clock: PredictionClock,
}

impl Default for PresConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma_init: 0.9,
            pin_gamma: None,
            tracker_policy: TrackerPolicy::Reset,
            clock: PredictionClock::Events,
        }
    }
}

impl PresConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::arg(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        match self.pin_gamma {
            Some(g) => FusionGate::pinned(g).map(|_| ()),
            None => FusionGate::new(self.gamma_init).map(|_| ()),
        }
    }
}
