//! Experiments around batched memory training: a state-space filter
//! simulation, gradient-variance probes, a step-size schedule, batch-size
//! sweeps and the synthetic stream they run on.

mod filter;
mod schedule;
pub mod stats;
mod sweep;
mod synthetic;
mod variance;

pub use filter::{filter_simulation, write_filter_csv, FilterSimConfig, FilterSimResult};
pub use schedule::lr_schedule;
pub use sweep::{
    batch_size_sweep, run_cell, write_sweep_csv, SweepCell, SweepConfig, SweepFailure, SweepResult,
    SweepRow,
};
pub use synthetic::{synthetic_stream, SyntheticConfig};
pub use variance::{epoch_gradient, epoch_variance_probe, write_variance_csv, VarianceEstimate};
