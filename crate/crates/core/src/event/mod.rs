//! Event streams: ingestion, chronological splitting, temporal batching,
//! negative sampling and pending-event structure.

mod batch;
mod ingest;
mod negative;
mod pending;

pub use batch::{chronological_split, partition_batches, TemporalBatch};
pub use ingest::{ingest_csv, IngestOptions};
pub use negative::{sample_negatives, NegativeBudget, NegativeConfig, NegativePool};
pub use pending::{
    pending_indices, pending_set, pending_stats, stream_pending_fraction, write_pending_stats_csv,
    PendingStats,
};

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// An observed interaction.
    Positive,
    /// A sampled non-interaction.
    Negative,
}

impl Polarity {
    /// Tracker component index: 0 for positive, 1 for negative.
    pub fn component(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub src: usize,
    pub dst: usize,
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub polarity: Polarity,
}

impl Event {
    pub fn positive(src: usize, dst: usize, timestamp: f64, features: Vec<f64>) -> Self {
        Self {
            src,
            dst,
            timestamp,
            features,
            polarity: Polarity::Positive,
        }
    }

    pub fn touches(&self, v: usize) -> bool {
        self.src == v || self.dst == v
    }

    pub fn shares_vertex(&self, other: &Event) -> bool {
        self.touches(other.src) || self.touches(other.dst)
    }
}

/// Chronologically ordered positive events over a dense vertex range.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    num_vertices: usize,
    feature_dim: usize,
}

impl EventStream {
    /// Validates ordering, vertex range, feature width and polarity.
    pub fn new(events: Vec<Event>, num_vertices: usize, feature_dim: usize) -> Result<Self> {
        for (k, e) in events.iter().enumerate() {
            if e.polarity != Polarity::Positive {
                return Err(Error::arg(format!("event {k} is not positive")));
            }
            if !(e.timestamp >= 0.0 && e.timestamp.is_finite()) {
                return Err(Error::arg(format!(
                    "event {k} has timestamp {}",
                    e.timestamp
                )));
            }
            if e.src >= num_vertices || e.dst >= num_vertices {
                return Err(Error::arg(format!(
                    "event {k} ({}, {}) outside {num_vertices} vertices",
                    e.src, e.dst
                )));
            }
            if e.features.len() != feature_dim {
                return Err(Error::dim(format!(
                    "event {k} has {} features, stream has {feature_dim}",
                    e.features.len()
                )));
            }
            if k > 0 && events[k - 1].timestamp > e.timestamp {
                return Err(Error::arg(format!(
                    "event {k} is out of chronological order"
                )));
            }
        }
        Ok(Self {
            events,
            num_vertices,
            feature_dim,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Index range of events with `lo <= t <= hi`.
    pub fn time_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.events.partition_point(|e| e.timestamp < lo);
        let end = self.events.partition_point(|e| e.timestamp <= hi);
        start..end.max(start)
    }

    /// Same vertex space and feature width, different events.
    pub(crate) fn with_events(&self, events: Vec<Event>) -> Self {
        Self {
            events,
            num_vertices: self.num_vertices,
            feature_dim: self.feature_dim,
        }
    }
}

impl fmt::Display for EventStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "vertices={} events={} feature_dim={}",
            self.num_vertices,
            self.events.len(),
            self.feature_dim
        )
    }
}
