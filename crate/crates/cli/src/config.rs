use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use memtrain_core::analysis::{FilterSimConfig, SyntheticConfig};
use memtrain_core::event::{NegativeBudget, NegativeConfig, NegativePool};
use memtrain_core::pres::TrackerPolicy;
use memtrain_core::{Hyperparams, PresConfig};

/// A bad key, value or file in the run configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSource,
    pub bipartite: bool,
    pub synthetic: SyntheticConfig,
    pub train_frac: f64,
    pub val_frac: f64,
    pub hyper: Hyperparams,
    pub pres_enabled: bool,
    pub pres: PresConfig,
    pub sweep_batch_sizes: Vec<usize>,
    pub sweep_seeds: Vec<u64>,
    pub sweep_modes: Vec<bool>,
    pub sweep_coherence_batches: usize,
    pub filter: FilterSimConfig,
    pub probe_batch_sizes: Vec<usize>,
    pub probe_resamples: usize,
    pub probe_negatives: usize,
    pub coherence_batches: usize,
    pub output_dir: PathBuf,
    /// Wall-clock columns are written as zero unless set, keeping outputs
    /// byte-identical across runs.
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::Synthetic,
            bipartite: true,
            synthetic: SyntheticConfig::default(),
            train_frac: 0.7,
            val_frac: 0.15,
            hyper: Hyperparams::default(),
            pres_enabled: false,
            pres: PresConfig::default(),
            sweep_batch_sizes: vec![20, 200],
            sweep_seeds: (0..5).collect(),
            sweep_modes: vec![false, true],
            sweep_coherence_batches: 0,
            filter: FilterSimConfig::default(),
            probe_batch_sizes: vec![5, 10, 20, 40],
            probe_resamples: 50,
            probe_negatives: 1,
            coherence_batches: 10,
            output_dir: PathBuf::from("runs"),
            timings: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(ConfigError(format!("{key}: empty list")));
    }
    Ok(items)
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn mode_name(pres: bool) -> &'static str {
    if pres {
        "pres"
    } else {
        "standard"
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let h = &mut self.hyper;
        let s = &mut self.synthetic;
        let f = &mut self.filter;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                h.seed = self.seed;
                f.seed = self.seed;
            }
            "data" => {
                self.data = if v == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Csv(PathBuf::from(v))
                }
            }
            "data.bipartite" => self.bipartite = parse(key, v)?,
            "synthetic.users" => s.users = parse(key, v)?,
            "synthetic.items" => s.items = parse(key, v)?,
            "synthetic.events" => s.events = parse(key, v)?,
            "synthetic.communities" => s.communities = parse(key, v)?,
            "synthetic.concurrent" => s.concurrent = parse(key, v)?,
            "synthetic.session_length" => s.session_length = parse(key, v)?,
            "synthetic.affinity" => s.affinity = parse(key, v)?,
            "synthetic.feature_noise" => s.feature_noise = parse(key, v)?,
            "synthetic.seed" => s.seed = parse(key, v)?,
            "split.train" => self.train_frac = parse(key, v)?,
            "split.val" => self.val_frac = parse(key, v)?,
            "model.memory_dim" => h.memory_dim = parse(key, v)?,
            "model.message_dim" => h.message_dim = parse(key, v)?,
            "model.hidden_dim" => h.hidden_dim = parse(key, v)?,
            "model.embedding" => h.embedding_mode = parse(key, v)?,
            "model.neighbor_cap" => h.neighbor_cap = parse(key, v)?,
            "train.batch_size" => h.batch_size = parse(key, v)?,
            "train.lr" => h.lr = parse(key, v)?,
            "train.epochs" => h.epochs = parse(key, v)?,
            "train.negatives" => {
                let k = parse(key, v)?;
                h.negatives.budget = match h.negatives.budget {
                    NegativeBudget::PerPositive(_) => NegativeBudget::PerPositive(k),
                    NegativeBudget::PerBatch(_) => NegativeBudget::PerBatch(k),
                }
            }
            "train.negative_budget" => {
                let k = match h.negatives.budget {
                    NegativeBudget::PerPositive(k) | NegativeBudget::PerBatch(k) => k,
                };
                h.negatives.budget = match v {
                    "per_positive" => NegativeBudget::PerPositive(k),
                    "per_batch" => NegativeBudget::PerBatch(k),
                    _ => return Err(ConfigError(format!("{key}: unknown budget {v:?}"))),
                }
            }
            "train.negative_pool" => {
                h.negatives.pool = match v {
                    "all" => NegativePool::AllVertices,
                    "observed_destinations" => NegativePool::ObservedDestinations,
                    _ => return Err(ConfigError(format!("{key}: unknown pool {v:?}"))),
                }
            }
            "train.memory_update_source" => h.memory_update_source = parse(key, v)?,
            "train.memory_policy" => h.memory_policy = parse(key, v)?,
            "pres.enabled" => self.pres_enabled = parse(key, v)?,
            "pres.beta" => self.pres.beta = parse(key, v)?,
            "pres.gamma_init" => self.pres.gamma_init = parse(key, v)?,
            "pres.pin_gamma" => {
                self.pres.pin_gamma = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "pres.tracker" => self.pres.tracker_policy = parse::<TrackerPolicy>(key, v)?,
            "pres.clock" => self.pres.clock = parse(key, v)?,
            "sweep.batch_sizes" => self.sweep_batch_sizes = parse_list(key, v)?,
            "sweep.seeds" => self.sweep_seeds = parse_list(key, v)?,
            "sweep.modes" => {
                self.sweep_modes = v
                    .split(',')
                    .map(|m| match m.trim() {
                        "standard" => Ok(false),
                        "pres" => Ok(true),
                        other => Err(ConfigError(format!("{key}: unknown mode {other:?}"))),
                    })
                    .collect::<Result<_>>()?
            }
            "sweep.coherence_batches" => self.sweep_coherence_batches = parse(key, v)?,
            "filter.dim" => f.dim = parse(key, v)?,
            "filter.drift" => f.drift = parse(key, v)?,
            "filter.sigma_transition" => f.sigma_transition = parse(key, v)?,
            "filter.sigma_measurement" => f.sigma_measurement = parse(key, v)?,
            "filter.steps" => f.steps = parse(key, v)?,
            "filter.trials" => f.trials = parse(key, v)?,
            "filter.gamma" => f.gamma = parse(key, v)?,
            "filter.tracker" => f.tracker = parse(key, v)?,
            "probe.batch_sizes" => self.probe_batch_sizes = parse_list(key, v)?,
            "probe.resamples" => self.probe_resamples = parse(key, v)?,
            "probe.negatives_per_batch" => self.probe_negatives = parse(key, v)?,
            "coherence.batches" => self.coherence_batches = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.timings" => self.timings = parse(key, v)?,
            _ => return Err(ConfigError(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let h = &self.hyper;
        let s = &self.synthetic;
        let f = &self.filter;
        let (budget, k) = match h.negatives.budget {
            NegativeBudget::PerPositive(k) => ("per_positive", k),
            NegativeBudget::PerBatch(k) => ("per_batch", k),
        };
        let pool = match h.negatives.pool {
            NegativePool::AllVertices => "all",
            NegativePool::ObservedDestinations => "observed_destinations",
        };
        let lower = |x: &dyn fmt::Debug| to_snake(&format!("{x:?}"));
        vec![
            ("seed", self.seed.to_string()),
            (
                "data",
                match &self.data {
                    DataSource::Synthetic => "synthetic".into(),
                    DataSource::Csv(p) => p.display().to_string(),
                },
            ),
            ("data.bipartite", self.bipartite.to_string()),
            ("synthetic.users", s.users.to_string()),
            ("synthetic.items", s.items.to_string()),
            ("synthetic.events", s.events.to_string()),
            ("synthetic.communities", s.communities.to_string()),
            ("synthetic.concurrent", s.concurrent.to_string()),
            ("synthetic.session_length", s.session_length.to_string()),
            ("synthetic.affinity", s.affinity.to_string()),
            ("synthetic.feature_noise", s.feature_noise.to_string()),
            ("synthetic.seed", s.seed.to_string()),
            ("split.train", self.train_frac.to_string()),
            ("split.val", self.val_frac.to_string()),
            ("model.memory_dim", h.memory_dim.to_string()),
            ("model.message_dim", h.message_dim.to_string()),
            ("model.hidden_dim", h.hidden_dim.to_string()),
            ("model.embedding", lower(&h.embedding_mode)),
            ("model.neighbor_cap", h.neighbor_cap.to_string()),
            ("train.batch_size", h.batch_size.to_string()),
            ("train.lr", h.lr.to_string()),
            ("train.epochs", h.epochs.to_string()),
            ("train.negatives", k.to_string()),
            ("train.negative_budget", budget.into()),
            ("train.negative_pool", pool.into()),
            ("train.memory_update_source", lower(&h.memory_update_source)),
            ("train.memory_policy", lower(&h.memory_policy)),
            ("pres.enabled", self.pres_enabled.to_string()),
            ("pres.beta", self.pres.beta.to_string()),
            ("pres.gamma_init", self.pres.gamma_init.to_string()),
            (
                "pres.pin_gamma",
                self.pres
                    .pin_gamma
                    .map_or_else(|| "none".into(), |g| g.to_string()),
            ),
            ("pres.tracker", lower(&self.pres.tracker_policy)),
            ("pres.clock", lower(&self.pres.clock)),
            ("sweep.batch_sizes", list(&self.sweep_batch_sizes)),
            ("sweep.seeds", list(&self.sweep_seeds)),
            (
                "sweep.modes",
                self.sweep_modes
                    .iter()
                    .map(|&p| mode_name(p))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "sweep.coherence_batches",
                self.sweep_coherence_batches.to_string(),
            ),
            ("filter.dim", f.dim.to_string()),
            ("filter.drift", f.drift.to_string()),
            ("filter.sigma_transition", f.sigma_transition.to_string()),
            ("filter.sigma_measurement", f.sigma_measurement.to_string()),
            ("filter.steps", f.steps.to_string()),
            ("filter.trials", f.trials.to_string()),
            ("filter.gamma", f.gamma.to_string()),
            ("filter.tracker", f.tracker.to_string()),
            ("probe.batch_sizes", list(&self.probe_batch_sizes)),
            ("probe.resamples", self.probe_resamples.to_string()),
            (
                "probe.negatives_per_batch",
                self.probe_negatives.to_string(),
            ),
            ("coherence.batches", self.coherence_batches.to_string()),
            ("output.dir", self.output_dir.display().to_string()),
            ("output.timings", self.timings.to_string()),
        ]
    }

    /// The resolved configuration in the same format it is read from.
    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies every assignment in `text`. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| ConfigError(format!("{origin}:{}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `key=value` from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Cross-field checks, run after every source has been applied.
    pub fn validate(&self) -> Result<()> {
        let wrap = |field: &str, e: memtrain_core::Error| ConfigError(format!("{field}: {e}"));
        if let DataSource::Csv(p) = &self.data {
            if !p.is_file() {
                return Err(ConfigError(format!("data: no such file {}", p.display())));
            }
        }
        self.synthetic
            .validate()
            .map_err(|e| wrap("synthetic", e))?;
        self.hyper.validate().map_err(|e| wrap("model/train", e))?;
        self.pres.validate().map_err(|e| wrap("pres", e))?;
        self.filter.validate().map_err(|e| wrap("filter", e))?;
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.train_frac)
            || !in_unit(self.val_frac)
            || self.train_frac + self.val_frac >= 1.0
        {
            return Err(ConfigError(
                "split.train, split.val: fractions must lie in (0,1) and sum below 1".into(),
            ));
        }
        if self.sweep_batch_sizes.windows(2).any(|w| w[0] >= w[1])
            || self.sweep_batch_sizes.contains(&0)
        {
            return Err(ConfigError(
                "sweep.batch_sizes: must be positive and strictly increasing".into(),
            ));
        }
        if self.probe_batch_sizes.contains(&0) {
            return Err(ConfigError("probe.batch_sizes: must be positive".into()));
        }
        if self.probe_resamples < 20 {
            return Err(ConfigError("probe.resamples: at least 20 required".into()));
        }
        if self.probe_negatives == 0 {
            return Err(ConfigError(
                "probe.negatives_per_batch: must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Negative sampling used by the variance probe.
    pub fn probe_negatives(&self) -> NegativeConfig {
        NegativeConfig {
            budget: NegativeBudget::PerBatch(self.probe_negatives),
            pool: self.hyper.negatives.pool,
        }
    }
}

/// `TimeProjection` to `time_projection`.
fn to_snake(s: &str) -> String {
    let mut out = String::new();
    for (k, c) in s.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if k > 0 {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}
