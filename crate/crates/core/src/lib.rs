//! Memory-based temporal graph training with temporal batching and
//! prediction-correction memory smoothing.

pub mod analysis;
pub mod error;
pub mod event;
pub mod mdgnn;
pub mod numerics;
pub mod pres;
pub mod seed;

pub use error::{Error, Result};
pub use event::{Event, EventStream, Polarity, TemporalBatch};
pub use mdgnn::{Hyperparams, MemoryStore, Model, Trainer};
pub use pres::{FusionGate, GmmTracker, PresConfig};
