mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use memtrain_core::analysis::{
    batch_size_sweep, epoch_variance_probe, filter_simulation, synthetic_stream, write_filter_csv,
    write_sweep_csv, write_variance_csv, SweepConfig,
};
use memtrain_core::event::{
    chronological_split, ingest_csv, partition_batches, pending_stats, write_pending_stats_csv,
    IngestOptions,
};
use memtrain_core::pres::{coherence_over_stream, estimate_coherence_bound, write_coherence_csv};
use memtrain_core::{EventStream, Model, Trainer};

use config::{ConfigError, DataSource, RunConfig};

#[derive(Parser)]
#[command(
    name = "memtrain",
    version,
    about = "Batched training of memory-based temporal graph models"
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a single key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, env = "MEMTRAIN_OUT", global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load a stream and report its batch structure.
    Ingest,
    /// Train one model and evaluate it on the held-out splits.
    Train,
    /// Train every (batch size, seed, mode) cell.
    Sweep,
    /// Run the linear-Gaussian estimator simulation.
    SimulateFilter,
    /// Estimate epoch-gradient variance across batch sizes.
    ProbeVariance,
    /// Train, then measure memory coherence over the training stream.
    CoherenceReport,
}

fn resolve(cli: &Cli) -> std::result::Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.render())?;
    match command {
        Command::Ingest => ingest(cfg, dir),
        Command::Train => train(cfg, dir),
        Command::Sweep => sweep(cfg, dir),
        Command::SimulateFilter => simulate_filter(cfg, dir),
        Command::ProbeVariance => probe_variance(cfg, dir),
        Command::CoherenceReport => coherence_report(cfg, dir),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes `lines` to `summary.txt` and echoes them to stdout.
fn summarize(dir: &Path, lines: &[String]) -> Result<()> {
    let mut w = create(&dir.join("summary.txt"))?;
    for l in lines {
        println!("{l}");
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<EventStream> {
    Ok(match &cfg.data {
        DataSource::Synthetic => synthetic_stream(&cfg.synthetic)?,
        DataSource::Csv(path) => ingest_csv(
            path,
            IngestOptions {
                bipartite: cfg.bipartite,
            },
        )
        .with_context(|| format!("reading {}", path.display()))?,
    })
}

fn ingest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let stream = load(cfg)?;
    let batches = partition_batches(&stream, cfg.hyper.batch_size)?;
    let stats: Vec<_> = batches.iter().map(pending_stats).collect();
    write_pending_stats_csv(create(&dir.join("pending.csv"))?, &stats)?;
    let positives: usize = stats.iter().map(|s| s.num_positives).sum();
    let pending: usize = stats.iter().map(|s| s.num_pending).sum();
    summarize(
        dir,
        &[
            format!("vertices {}", stream.num_vertices()),
            format!("events {}", stream.len()),
            format!("feature_dim {}", stream.feature_dim()),
            format!("batches {}", batches.len()),
            format!(
                "pending_fraction {}",
                pending as f64 / positives.max(1) as f64
            ),
        ],
    )
}

fn fit(cfg: &RunConfig, dir: &Path) -> Result<(Trainer, EventStream, EventStream)> {
    let stream = load(cfg)?;
    let (train, val, test) = chronological_split(&stream, cfg.train_frac, cfg.val_frac)?;
    let mut trainer = Trainer::new(&train, cfg.hyper.clone())?.record_seconds(cfg.timings);
    if cfg.pres_enabled {
        trainer = trainer.with_pres(cfg.pres.clone())?;
    }
    let metrics = trainer.fit(&train, &val)?;
    metrics.write_csv(create(&dir.join("metrics.csv"))?)?;
    let mut w = create(&dir.join("model.ckpt"))?;
    trainer.model().params().save(&mut w)?;
    w.flush()?;
    if let Some(tracker) = trainer.tracker() {
        let mut w = create(&dir.join("tracker.ckpt"))?;
        tracker.save(&mut w)?;
        w.flush()?;
    }
    Ok((trainer, train, test))
}

fn train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (trainer, _, test) = fit(cfg, dir)?;
    let mut lines = vec![format!("epochs {}", trainer.epochs_done())];
    if let Some(g) = trainer.gate() {
        lines.push(format!("gamma {}", g.gamma()));
    }
    // The test split follows validation, whose events never reached memory,
    // so this is a cold-start score.
    match trainer.evaluate(&test) {
        Ok(ap) => lines.push(format!("test_ap {ap}")),
        Err(e) => lines.push(format!("test_ap undefined ({e})")),
    }
    summarize(dir, &lines)
}

fn sweep(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let stream = load(cfg)?;
    let sc = SweepConfig {
        batch_sizes: cfg.sweep_batch_sizes.clone(),
        seeds: cfg.sweep_seeds.clone(),
        pres_flags: cfg.sweep_modes.clone(),
        epochs: cfg.hyper.epochs,
        hyper: cfg.hyper.clone(),
        pres: cfg.pres.clone(),
        train_frac: cfg.train_frac,
        val_frac: cfg.val_frac,
        coherence_batches: cfg.sweep_coherence_batches,
    };
    let mut res = batch_size_sweep(&sc, &stream)?;
    if !cfg.timings {
        for r in &mut res.rows {
            r.epoch_seconds = 0.0;
        }
    }
    write_sweep_csv(create(&dir.join("sweep.csv"))?, &res.rows)?;
    let mut lines = Vec::new();
    for &b in &sc.batch_sizes {
        for &p in &sc.pres_flags {
            if let Some((m, s)) = res.summary(b, p) {
                let mode = if p { "pres" } else { "standard" };
                lines.push(format!("b={b} {mode} final_ap {m:.4} ± {s:.4}"));
            }
        }
    }
    for f in &res.failures {
        lines.push(format!(
            "failed b={} seed={} pres={}: {}",
            f.cell.batch_size, f.cell.seed, f.cell.pres, f.message
        ));
    }
    summarize(dir, &lines)
}

fn simulate_filter(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let res = filter_simulation(&cfg.filter)?;
    write_filter_csv(create(&dir.join("filter.csv"))?, &res)?;
    let z = (res.mse_raw - res.mse_pres) / res.se_diff;
    summarize(
        dir,
        &[
            format!("mse_raw {} ± {}", res.mse_raw, res.se_raw),
            format!("mse_pres {} ± {}", res.mse_pres, res.se_pres),
            format!("paired_z {z}"),
        ],
    )
}

fn probe_variance(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let stream = load(cfg)?;
    let mut hyper = cfg.hyper.clone();
    hyper.negatives = cfg.probe_negatives();
    let model = Model::new(stream.feature_dim(), &hyper)?;
    let rows = epoch_variance_probe(
        &model,
        &stream,
        &hyper,
        &cfg.probe_batch_sizes,
        cfg.probe_resamples,
        cfg.seed,
    )?;
    write_variance_csv(create(&dir.join("variance.csv"))?, &rows)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("b={} trace_variance {}", r.batch_size, r.trace_variance))
        .collect();
    summarize(dir, &lines)
}

fn coherence_report(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (trainer, train, _) = fit(cfg, dir)?;
    let batches = coherence_over_stream(
        trainer.model(),
        &train,
        trainer.hyper(),
        trainer.pres_view(),
        cfg.coherence_batches,
    )?;
    write_coherence_csv(create(&dir.join("coherence.csv"))?, &batches)?;
    let bound = estimate_coherence_bound(&batches);
    summarize(
        dir,
        &[
            format!("batches {}", batches.len()),
            format!(
                "coherence_bound {}",
                bound.map_or_else(|| "undefined".into(), |b| b.to_string())
            ),
        ],
    )
}
