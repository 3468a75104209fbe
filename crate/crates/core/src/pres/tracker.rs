use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::event::Polarity;
use crate::numerics::{read_tensors, write_tensor, Tensor};

const COMPONENTS: usize = 2;

/// Streaming per-vertex, per-polarity sums of memory corrections.
///
/// Only `n`, `ξ = Σδ` and `ψ = Σδ²` are stored; means and variances are
/// recomputed from them on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmTracker {
    dim: usize,
    n: Vec<u64>,
    xi: Vec<f64>,
    psi: Vec<f64>,
    totals: [u64; COMPONENTS],
    skipped: u64,
}

impl GmmTracker {
    pub fn new(num_vertices: usize, dim: usize) -> Self {
        let rows = COMPONENTS * num_vertices;
        Self {
            dim,
            n: vec![0; rows],
            xi: vec![0.0; rows * dim],
            psi: vec![0.0; rows * dim],
            totals: [0; COMPONENTS],
            skipped: 0,
        }
    }

    pub fn reset(&mut self) {
        self.n.iter_mut().for_each(|x| *x = 0);
        self.xi.iter_mut().for_each(|x| *x = 0.0);
        self.psi.iter_mut().for_each(|x| *x = 0.0);
        self.totals = [0; COMPONENTS];
        self.skipped = 0;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.n.len() / COMPONENTS
    }

    /// Number of allocated statistic rows (one per vertex and component).
    pub fn statistic_rows(&self) -> usize {
        self.n.len()
    }

    /// Updates refused because of a non-finite delta.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn row(v: usize, j: Polarity) -> usize {
        COMPONENTS * v + j.component()
    }

    fn span(&self, v: usize, j: Polarity) -> std::ops::Range<usize> {
        let r = Self::row(v, j);
        r * self.dim..(r + 1) * self.dim
    }

    pub fn count(&self, v: usize, j: Polarity) -> u64 {
        self.n[Self::row(v, j)]
    }

    pub fn xi(&self, v: usize, j: Polarity) -> &[f64] {
        &self.xi[self.span(v, j)]
    }

    pub fn psi(&self, v: usize, j: Polarity) -> &[f64] {
        &self.psi[self.span(v, j)]
    }

    /// `ξ/n`, or zeros before the first update.
    pub fn mean(&self, v: usize, j: Polarity) -> Vec<f64> {
        let n = self.count(v, j);
        if n == 0 {
            return vec![0.0; self.dim];
        }
        self.xi(v, j).iter().map(|x| x / n as f64).collect()
    }

    /// Diagonal `ψ/n − μ²`, or zeros before the first update.
    pub fn variance(&self, v: usize, j: Polarity) -> Vec<f64> {
        let n = self.count(v, j);
        if n == 0 {
            return vec![0.0; self.dim];
        }
        let n = n as f64;
        self.xi(v, j)
            .iter()
            .zip(self.psi(v, j))
            .map(|(x, p)| {
                let mu = x / n;
                p / n - mu * mu
            })
            .collect()
    }

    /// Global mixture weights `n^{(j)} / Σ_k n^{(k)}`; uniform before any update.
    pub fn alpha(&self) -> [f64; COMPONENTS] {
        let total: u64 = self.totals.iter().sum();
        if total == 0 {
            return [1.0 / COMPONENTS as f64; COMPONENTS];
        }
        self.totals.map(|c| c as f64 / total as f64)
    }

    /// `Σ_j α_j μ_v^{(j)}`, with empty components contributing zero.
    pub fn mixture_mean(&self, v: usize) -> Vec<f64> {
        self.mixture_mean_with(v, self.alpha())
    }

    pub fn mixture_mean_with(&self, v: usize, alpha: [f64; COMPONENTS]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, a) in [Polarity::Positive, Polarity::Negative]
            .into_iter()
            .zip(alpha)
        {
            for (o, m) in out.iter_mut().zip(self.mean(v, j)) {
                *o += a * m;
            }
        }
        out
    }

    /// `n += 1; ξ += δ; ψ += δ²`. A non-finite delta is refused and counted.
    pub fn update(&mut self, v: usize, j: Polarity, delta: &[f64]) -> Result<()> {
        if delta.len() != self.dim {
            return Err(Error::dim(format!(
                "delta of {} for width {}",
                delta.len(),
                self.dim
            )));
        }
        if v >= self.num_vertices() {
            return Err(Error::arg(format!(
                "vertex {v} outside {} vertices",
                self.num_vertices()
            )));
        }
        if delta.iter().any(|d| !d.is_finite()) {
            self.skipped += 1;
            return Err(Error::numeric(format!(
                "non-finite tracker delta for vertex {v}"
            )));
        }
        let span = self.span(v, j);
        for ((x, p), d) in self.xi[span.clone()]
            .iter_mut()
            .zip(&mut self.psi[span])
            .zip(delta)
        {
            *x += d;
            *p += d * d;
        }
        self.n[Self::row(v, j)] += 1;
        self.totals[j.component()] += 1;
        Ok(())
    }

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        let rows = self.n.len();
        let n = Tensor::new(rows, 1, self.n.iter().map(|&c| c as f64).collect())?;
        write_tensor(&mut w, "tracker.n", &n)?;
        write_tensor(
            &mut w,
            "tracker.xi",
            &Tensor::new(rows, self.dim, self.xi.clone())?,
        )?;
        write_tensor(
            &mut w,
            "tracker.psi",
            &Tensor::new(rows, self.dim, self.psi.clone())?,
        )?;
        Ok(())
    }

    pub fn load(r: impl BufRead) -> Result<Self> {
        let tensors = read_tensors(r)?;
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("missing {name}")))
        };
        let (n, xi, psi) = (
            find("tracker.n")?,
            find("tracker.xi")?,
            find("tracker.psi")?,
        );
        let rows = n.rows();
        if n.cols() != 1 || rows % COMPONENTS != 0 || xi.rows() != rows || psi.shape() != xi.shape()
        {
            return Err(Error::Format("inconsistent tracker tensor shapes".into()));
        }
        let counts: Vec<u64> = n.data().iter().map(|&c| c as u64).collect();
        let mut totals = [0; COMPONENTS];
        for (r, &c) in counts.iter().enumerate() {
            totals[r % COMPONENTS] += c;
        }
        Ok(Self {
            dim: xi.cols(),
            n: counts,
            xi: xi.data().to_vec(),
            psi: psi.data().to_vec(),
            totals,
            skipped: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const POS: Polarity = Polarity::Positive;
    const NEG: Polarity = Polarity::Negative;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn two_deltas() {
        let mut t = GmmTracker::new(1, 1);
        t.update(0, POS, &[1.0]).unwrap();
        assert_eq!(t.variance(0, POS), vec![0.0]);
        t.update(0, POS, &[3.0]).unwrap();
        assert_eq!(t.count(0, POS), 2);
        assert_eq!(t.mean(0, POS), vec![2.0]);
        assert_eq!(t.variance(0, POS), vec![1.0]);
        assert_eq!(t.count(0, NEG), 0);
    }

    #[test]
    fn symmetric_mixture() {
        let mut t = GmmTracker::new(1, 1);
        t.update(0, POS, &[1.0]).unwrap();
        t.update(0, NEG, &[-1.0]).unwrap();
        assert_eq!(t.alpha(), [0.5, 0.5]);
        assert_eq!(t.mixture_mean(0), vec![0.0]);
    }

    #[test]
    fn non_finite_delta_is_refused() {
        let mut t = GmmTracker::new(2, 2);
        assert!(matches!(
            t.update(1, POS, &[1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert_eq!((t.count(1, POS), t.skipped()), (0, 1));
        assert!(t.update(1, POS, &[1.0]).is_err());
    }

    #[test]
    fn storage_is_two_rows_per_vertex() {
        assert_eq!(GmmTracker::new(37, 5).statistic_rows(), 74);
    }

    #[test]
    fn thousand_deltas_match_two_pass() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut t = GmmTracker::new(3, 2);
        let mut hist: [Vec<[f64; 2]>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..1000 {
            let d = [
                rng.random_range(-2.0..3.0),
                rng.random_range(-0.5..0.5) * 10.0,
            ];
            let j = if rng.random_bool(0.3) { NEG } else { POS };
            t.update(1, j, &d).unwrap();
            hist[j.component()].push(d);
        }
        for j in [POS, NEG] {
            let mean = t.mean(1, j);
            let var = t.variance(1, j);
            for c in 0..2 {
                let xs: Vec<f64> = hist[j.component()].iter().map(|d| d[c]).collect();
                let (m, v) = two_pass(&xs);
                assert!((mean[c] - m).abs() < 1e-10);
                assert!((var[c] - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut t = GmmTracker::new(2, 3);
        t.update(0, POS, &[0.1, -0.2, 0.3]).unwrap();
        t.update(1, NEG, &[1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        t.save(&mut buf).unwrap();
        assert_eq!(GmmTracker::load(&buf[..]).unwrap(), t);
    }

    proptest! {
        #[test]
        fn variance_is_non_negative(deltas in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let mut t = GmmTracker::new(1, 1);
            for d in &deltas {
                t.update(0, POS, &[*d]).unwrap();
            }
            let (m, v) = two_pass(&deltas);
            prop_assert!(t.variance(0, POS)[0] >= -1e-9 * (1.0 + m * m));
            prop_assert!((t.mean(0, POS)[0] - m).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!((t.variance(0, POS)[0] - v).abs() <= 1e-7 * (1.0 + m * m));
        }
    }
}
