use std::io::Write;

use rayon::prelude::*;

use crate::analysis::stats::{mean, std_dev};
use crate::error::{Error, Result};
use crate::event::{chronological_split, EventStream};
use crate::mdgnn::{Hyperparams, Trainer};
use crate::pres::{coherence_over_stream, PresConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    /// Strictly increasing.
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Which of standard (`false`) and prediction-correction (`true`) runs to make.
    pub pres_flags: Vec<bool>,
    pub epochs: usize,
    /// Everything except batch size, seed and epochs.
    pub hyper: Hyperparams,
    pub pres: PresConfig,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Batches measured for the coherence column; zero skips it.
    pub coherence_batches: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![20, 200],
            seeds: (0..5).collect(),
            pres_flags: vec![false, true],
            epochs: 10,
            hyper: Hyperparams::default(),
            pres: PresConfig::default(),
            train_frac: 0.7,
            val_frac: 0.15,
            coherence_batches: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(Error::arg("sweep needs positive batch sizes"));
        }
        if self.batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("sweep batch sizes must be strictly increasing"));
        }
        if self.seeds.is_empty() || self.pres_flags.is_empty() {
            return Err(Error::arg("sweep needs at least one seed and one mode"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("sweep needs at least one epoch"));
        }
        self.pres.validate()
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &seed in &self.seeds {
                for &pres in &self.pres_flags {
                    out.push(SweepCell {
                        batch_size,
                        seed,
                        pres,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepCell {
    pub batch_size: usize,
    pub seed: u64,
    pub pres: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub beta: f64,
    pub final_ap: f64,
    /// Validation AP after every epoch.
    pub ap_curve: Vec<f64>,
    pub epoch_seconds: f64,
    pub min_coherence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFailure {
    pub cell: SweepCell,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepResult {
    pub fn row(&self, batch_size: usize, seed: u64, pres: bool) -> Option<&SweepRow> {
        let cell = SweepCell {
            batch_size,
            seed,
            pres,
        };
        self.rows.iter().find(|r| r.cell == cell)
    }

    /// Final AP per seed for one `(b, mode)` column, in seed order.
    pub fn final_aps(&self, batch_size: usize, pres: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.cell.batch_size == batch_size && r.cell.pres == pres)
            .map(|r| r.final_ap)
            .collect()
    }

    /// `(mean, std)` of final AP over seeds.
    pub fn summary(&self, batch_size: usize, pres: bool) -> Option<(f64, f64)> {
        let aps = self.final_aps(batch_size, pres);
        (!aps.is_empty()).then(|| (mean(&aps), std_dev(&aps)))
    }
}

/// Trains one cell on `train` and evaluates on `val` after every epoch.
pub fn run_cell(
    cfg: &SweepConfig,
    cell: SweepCell,
    train: &EventStream,
    val: &EventStream,
) -> Result<SweepRow> {
    let hyper = Hyperparams {
        batch_size: cell.batch_size,
        seed: cell.seed,
        epochs: cfg.epochs,
        ..cfg.hyper.clone()
    };
    let mut trainer = Trainer::new(train, hyper.clone())?;
    if cell.pres {
        trainer = trainer.with_pres(cfg.pres.clone())?;
    }
    let metrics = trainer.fit(train, val)?;
    let ap_curve: Vec<f64> = metrics.epochs.iter().map(|e| e.ap).collect();
    let epoch_seconds = mean(&metrics.stats.iter().map(|s| s.seconds).collect::<Vec<_>>());
    let min_coherence = if cfg.coherence_batches > 0 {
        coherence_over_stream(
            trainer.model(),
            train,
            &hyper,
            trainer.pres_view(),
            cfg.coherence_batches,
        )?
        .iter()
        .filter_map(|b| b.min())
        .reduce(f64::min)
    } else {
        None
    };
    Ok(SweepRow {
        cell,
        beta: if cell.pres { cfg.pres.beta } else { 0.0 },
        final_ap: *ap_curve.last().expect("at least one epoch"),
        ap_curve,
        epoch_seconds,
        min_coherence,
    })
}

/// Runs every `(b, seed, mode)` cell in parallel. A failing cell is reported
/// in `failures` and left out of `rows`.
pub fn batch_size_sweep(cfg: &SweepConfig, stream: &EventStream) -> Result<SweepResult> {
    cfg.validate()?;
    let (train, val, _) = chronological_split(stream, cfg.train_frac, cfg.val_frac)?;
    let outcomes: Vec<(SweepCell, Result<SweepRow>)> = cfg
        .cells()
        .into_par_iter()
        .map(|cell| (cell, run_cell(cfg, cell, &train, &val)))
        .collect();
    let mut res = SweepResult::default();
    for (cell, outcome) in outcomes {
        match outcome {
            Ok(row) => res.rows.push(row),
            Err(e) => res.failures.push(SweepFailure {
                cell,
                message: e.to_string(),
            }),
        }
    }
    Ok(res)
}

pub fn write_sweep_csv(w: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record([
        "batch_size",
        "seed",
        "pres",
        "beta",
        "final_ap",
        "epoch_seconds",
        "min_coherence",
    ])
    .map_err(io)?;
    for r in rows {
        out.write_record([
            r.cell.batch_size.to_string(),
            r.cell.seed.to_string(),
            r.cell.pres.to_string(),
            r.beta.to_string(),
            r.final_ap.to_string(),
            r.epoch_seconds.to_string(),
            r.min_coherence.map_or_else(String::new, |m| m.to_string()),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
