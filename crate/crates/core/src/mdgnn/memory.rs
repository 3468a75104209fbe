use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-vertex memory vectors, last-update times and recent temporal neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryStore {
    states: Tensor,
    last_update: Vec<f64>,
    update_count: Vec<u64>,
    neighbors: Vec<VecDeque<usize>>,
    neighbor_cap: usize,
}

impl MemoryStore {
    pub fn new(num_vertices: usize, dim: usize, neighbor_cap: usize) -> Self {
        Self {
            states: Tensor::zeros(num_vertices, dim),
            last_update: vec![0.0; num_vertices],
            update_count: vec![0; num_vertices],
            neighbors: vec![VecDeque::new(); num_vertices],
            neighbor_cap,
        }
    }

    /// Zero states, times, counters and neighbor history.
    pub fn reset(&mut self) {
        let (n, d) = self.states.shape();
        *self = Self::new(n, d, self.neighbor_cap);
    }

    /// Keeps the states but restarts the clock and the history, for carrying
    /// memory into a new pass over the same stream.
    pub fn rewind(&mut self) {
        self.last_update.iter_mut().for_each(|t| *t = 0.0);
        self.update_count.iter_mut().for_each(|c| *c = 0);
        self.neighbors.iter_mut().for_each(VecDeque::clear);
    }

    pub fn num_vertices(&self) -> usize {
        self.last_update.len()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn state(&self, v: usize) -> &[f64] {
        self.states.row(v)
    }

    pub fn last_update(&self, v: usize) -> f64 {
        self.last_update[v]
    }

    pub fn update_count(&self, v: usize) -> u64 {
        self.update_count[v]
    }

    pub fn neighbor_cap(&self) -> usize {
        self.neighbor_cap
    }

    /// Most recent neighbors of `v`, oldest first.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[v].iter().copied()
    }

    pub(crate) fn write(&mut self, v: usize, state: &[f64], time: f64) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::dim(format!(
                "memory row of {} for width {}",
                state.len(),
                self.dim()
            )));
        }
        if time < self.last_update[v] {
            return Err(Error::arg(format!(
                "vertex {v} updated at {time} after {}",
                self.last_update[v]
            )));
        }
        let d = self.dim();
        self.states.data_mut()[v * d..(v + 1) * d].copy_from_slice(state);
        self.last_update[v] = time;
        self.update_count[v] += 1;
        Ok(())
    }

    pub(crate) fn push_neighbor(&mut self, v: usize, u: usize) {
        if self.neighbor_cap == 0 {
            return;
        }
        let q = &mut self.neighbors[v];
        if q.len() == self.neighbor_cap {
            q.pop_front();
        }
        q.push_back(u);
    }

    /// Overwrites a state directly, bypassing time and counter bookkeeping.
    pub fn set_state(&mut self, v: usize, state: &[f64]) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::dim(format!(
                "state of {} for width {}",
                state.len(),
                self.dim()
            )));
        }
        let d = self.dim();
        self.states.data_mut()[v * d..(v + 1) * d].copy_from_slice(state);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbor_history_is_capped() {
        let mut m = MemoryStore::new(3, 2, 2);
        for u in [1, 2, 1] {
            m.push_neighbor(0, u);
        }
        assert_eq!(m.neighbors(0).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn writes_are_monotone_in_time() {
        let mut m = MemoryStore::new(2, 2, 0);
        m.write(1, &[0.5, -0.5], 2.0).unwrap();
        assert_eq!(m.state(1), &[0.5, -0.5]);
        assert_eq!((m.last_update(1), m.update_count(1)), (2.0, 1));
        assert!(m.write(1, &[0.0, 0.0], 1.0).is_err());
        assert!(m.write(1, &[0.0], 3.0).is_err());
        m.reset();
        assert_eq!(m.state(1), &[0.0, 0.0]);
        assert_eq!(m.update_count(1), 0);
    }
}
