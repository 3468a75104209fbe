use std::io::Write;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::Polarity;
use crate::pres::GmmTracker;

/// Linear-Gaussian state-space model and estimator settings.
///
/// The true state moves by `N(drift, σ2²)` per unit step; measurements add
/// `N(0, σ1²)` noise.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSimConfig {
    pub dim: usize,
    pub drift: f64,
    pub sigma_transition: f64,
    pub sigma_measurement: f64,
    pub steps: usize,
    pub trials: usize,
    pub gamma: f64,
    /// Off means the predictor never learns a drift.
    pub tracker: bool,
    pub seed: u64,
}

impl Default for FilterSimConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            drift: 0.5,
            sigma_transition: 0.0,
            sigma_measurement: 1.0,
            steps: 100,
            trials: 10_000,
            gamma: 0.2,
            tracker: true,
            seed: 0,
        }
    }
}

impl FilterSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.steps == 0 || self.trials == 0 {
            return Err(Error::arg(
                "filter simulation needs dim, steps and trials of at least 1",
            ));
        }
        if !(self.sigma_transition >= 0.0 && self.sigma_measurement >= 0.0) {
            return Err(Error::arg("noise scales must be non-negative"));
        }
        if !self.drift.is_finite() {
            return Err(Error::arg("drift must be finite"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::arg(format!(
                "gamma must lie in [0,1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Monte-Carlo errors per step, averaged over trials. Errors are squared
/// Euclidean distances to the true state divided by the dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSimResult {
    pub mse_raw: f64,
    pub mse_pres: f64,
    /// Standard errors of the two overall means across trials.
    pub se_raw: f64,
    pub se_pres: f64,
    /// Standard error of the per-trial difference `raw − pres`.
    pub se_diff: f64,
    pub curve_raw: Vec<f64>,
    pub curve_pres: Vec<f64>,
    pub curve_se_raw: Vec<f64>,
    pub curve_se_pres: Vec<f64>,
}

impl FilterSimResult {
    /// One-sided z-score of `mse_raw − mse_pres` from paired trials.
    pub fn z_score(&self) -> f64 {
        let diff = self.mse_raw - self.mse_pres;
        if self.se_diff == 0.0 {
            return if diff > 0.0 { f64::INFINITY } else { 0.0 };
        }
        diff / self.se_diff
    }
}

const FILTER_TAG: u64 = 0x6669_6c74;

struct Trial {
    raw: Vec<f64>,
    pres: Vec<f64>,
}

fn run_trial(cfg: &FilterSimConfig, trial: usize) -> Result<Trial> {
    let mut rng = crate::seed::rng(cfg.seed, &[FILTER_TAG, trial as u64]);
    let d = cfg.dim;
    let step =
        Normal::new(cfg.drift, cfg.sigma_transition).map_err(|e| Error::arg(e.to_string()))?;
    let meas = Normal::new(0.0, cfg.sigma_measurement).map_err(|e| Error::arg(e.to_string()))?;
    let mut tracker = GmmTracker::new(1, d);
    let mut truth = vec![0.0; d];
    let mut est = vec![0.0; d];
    let mut out = Trial {
        raw: Vec::with_capacity(cfg.steps),
        pres: Vec::with_capacity(cfg.steps),
    };
    for _ in 0..cfg.steps {
        for x in truth.iter_mut() {
            *x += step.sample(&mut rng);
        }
        let measured: Vec<f64> = truth.iter().map(|x| x + meas.sample(&mut rng)).collect();
        let drift = tracker.mean(0, Polarity::Positive);
        let fused: Vec<f64> = est
            .iter()
            .zip(&drift)
            .zip(&measured)
            .map(|((e, dr), m)| (1.0 - cfg.gamma) * (e + dr) + cfg.gamma * m)
            .collect();
        if cfg.tracker {
            let inc: Vec<f64> = fused.iter().zip(&est).map(|(f, e)| f - e).collect();
            tracker.update(0, Polarity::Positive, &inc)?;
        }
        let err = |v: &[f64]| {
            v.iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / d as f64
        };
        out.raw.push(err(&measured));
        out.pres.push(err(&fused));
        est = fused;
    }
    Ok(out)
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let m = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let var = xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Compares the raw measurements with the predict-fuse estimator whose drift
/// is the tracked mean of its own increments.
pub fn filter_simulation(cfg: &FilterSimConfig) -> Result<FilterSimResult> {
    cfg.validate()?;
    let trials: Vec<Trial> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| run_trial(cfg, k))
        .collect::<Result<_>>()?;
    let n = trials.len();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mse_raw, se_raw) = mean_se(trials.iter().map(|t| avg(&t.raw)), n);
    let (mse_pres, se_pres) = mean_se(trials.iter().map(|t| avg(&t.pres)), n);
    let (_, se_diff) = mean_se(trials.iter().map(|t| avg(&t.raw) - avg(&t.pres)), n);
    let mut res = FilterSimResult {
        mse_raw,
        mse_pres,
        se_raw,
        se_pres,
        se_diff,
        curve_raw: Vec::with_capacity(cfg.steps),
        curve_pres: Vec::with_capacity(cfg.steps),
        curve_se_raw: Vec::with_capacity(cfg.steps),
        curve_se_pres: Vec::with_capacity(cfg.steps),
    };
    for s in 0..cfg.steps {
        let (m, se) = mean_se(trials.iter().map(|t| t.raw[s]), n);
        res.curve_raw.push(m);
        res.curve_se_raw.push(se);
        let (m, se) = mean_se(trials.iter().map(|t| t.pres[s]), n);
        res.curve_pres.push(m);
        res.curve_se_pres.push(se);
    }
    Ok(res)
}

pub fn write_filter_csv(w: impl Write, res: &FilterSimResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record(["step", "mse_raw", "mse_pres", "se_raw", "se_pres"])
        .map_err(io)?;
    for s in 0..res.curve_raw.len() {
        out.write_record([
            s.to_string(),
            res.curve_raw[s].to_string(),
            res.curve_pres[s].to_string(),
            res.curve_se_raw[s].to_string(),
            res.curve_se_pres[s].to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FilterSimConfig {
        FilterSimConfig {
            trials: 200,
            steps: 30,
            ..FilterSimConfig::default()
        }
    }

    #[test]
    fn pass_through_at_gamma_one() {
        for tracker in [true, false] {
            let r = filter_simulation(&FilterSimConfig {
                gamma: 1.0,
                tracker,
                ..small()
            })
            .unwrap();
            assert_eq!(r.mse_raw, r.mse_pres);
            assert_eq!(r.curve_raw, r.curve_pres);
        }
    }

    #[test]
    fn noiseless_measurements() {
        let r = filter_simulation(&FilterSimConfig {
            sigma_measurement: 0.0,
            ..small()
        })
        .unwrap();
        assert_eq!(r.mse_raw, 0.0);
        assert!(r.mse_pres >= r.mse_raw);
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let r = filter_simulation(&small()).unwrap();
        let mut buf = Vec::new();
        write_filter_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(text.starts_with("step,mse_raw,mse_pres,se_raw,se_pres\n0,"));
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            filter_simulation(&small()).unwrap(),
            filter_simulation(&small()).unwrap()
        );
    }
}
