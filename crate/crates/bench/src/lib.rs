//! Benchmark fixtures.

use memtrain_core::analysis::{synthetic_stream, SyntheticConfig};
use memtrain_core::EventStream;

/// The default synthetic stream, scaled to `events` interactions.
pub fn stream(events: usize) -> EventStream {
    synthetic_stream(&SyntheticConfig {
        events,
        ..SyntheticConfig::default()
    })
    .expect("valid synthetic config")
}
