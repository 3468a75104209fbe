use rand::Rng;

use crate::error::{Error, Result};
use crate::event::NegativeConfig;
use crate::numerics::{Bindings, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmbeddingMode {
    #[default]
    Identity,
    TimeProjection,
    NeighborMean,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "time_projection" => Ok(Self::TimeProjection),
            "neighbor_mean" => Ok(Self::NeighborMean),
            other => Err(Error::arg(format!("unknown embedding mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MemoryUpdateSource {
    #[default]
    PositivesOnly,
    PositivesAndNegatives,
}

impl std::str::FromStr for MemoryUpdateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positives_only" => Ok(Self::PositivesOnly),
            "positives_and_negatives" => Ok(Self::PositivesAndNegatives),
            other => Err(Error::arg(format!(
                "unknown memory update source {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MemoryPolicy {
    /// Zero memory at the start of every epoch.
    #[default]
    Reset,
    /// Keep memory states across epochs; times and neighbor history restart.
    Carry,
}

impl std::str::FromStr for MemoryPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reset" => Ok(Self::Reset),
            "carry" => Ok(Self::Carry),
            other => Err(Error::arg(format!("unknown memory policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub memory_dim: usize,
    pub message_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    /// Zero disables parameter updates.
    pub lr: f64,
    pub epochs: usize,
    pub negatives: NegativeConfig,
    pub seed: u64,
    pub memory_update_source: MemoryUpdateSource,
    pub embedding_mode: EmbeddingMode,
    pub neighbor_cap: usize,
    pub memory_policy: MemoryPolicy,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            memory_dim: 16,
            message_dim: 16,
            hidden_dim: 32,
            batch_size: 200,
            lr: 0.01,
            epochs: 10,
            negatives: NegativeConfig::default(),
            seed: 0,
            memory_update_source: MemoryUpdateSource::default(),
            embedding_mode: EmbeddingMode::default(),
            neighbor_cap: 10,
            memory_policy: MemoryPolicy::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("memory_dim", self.memory_dim),
            ("message_dim", self.message_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be positive")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.embedding_mode == EmbeddingMode::NeighborMean && self.neighbor_cap == 0 {
            return Err(Error::arg("neighbor_mean needs neighbor_cap >= 1"));
        }
        Ok(())
    }
}

/// `log(1 + Δt)`
pub fn time_encoding(dt: f64) -> f64 {
    dt.ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Ids {
    pub msg_w1: ParamId,
    pub msg_b1: ParamId,
    pub msg_w2: ParamId,
    pub msg_b2: ParamId,
    pub gru_wz: ParamId,
    pub gru_bz: ParamId,
    pub gru_wr: ParamId,
    pub gru_br: ParamId,
    pub gru_wn: ParamId,
    pub gru_bn: ParamId,
    pub emb_w1: Option<ParamId>,
    pub emb_w2: Option<ParamId>,
    pub dec_w1: ParamId,
    pub dec_b1: ParamId,
    pub dec_w2: ParamId,
    pub dec_b2: ParamId,
}

/// Learnable weights of the message, memory, embedding and decoder networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    params: ParamSet,
    ids: Ids,
    memory_dim: usize,
    message_dim: usize,
    feature_dim: usize,
    mode: EmbeddingMode,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(rows, cols, data).expect("finite init")
}

impl Model {
    pub fn new(feature_dim: usize, hyper: &Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let (ds, dm, h) = (hyper.memory_dim, hyper.message_dim, hyper.hidden_dim);
        let mut rng = crate::seed::rng(hyper.seed, &[0x006d_6f64_656c]);
        let mut p = ParamSet::new();
        let msg_in = 2 * ds + feature_dim + 1;
        let mut weight =
            |p: &mut ParamSet, name: &str, r: usize, c: usize| p.add(name, glorot(&mut rng, r, c));
        let msg_w1 = weight(&mut p, "msg.w1", msg_in, h);
        let msg_b1 = p.add("msg.b1", Tensor::zeros(1, h));
        let msg_w2 = weight(&mut p, "msg.w2", h, dm);
        let msg_b2 = p.add("msg.b2", Tensor::zeros(1, dm));
        let gru_wz = weight(&mut p, "gru.wz", ds + dm, ds);
        let gru_bz = p.add("gru.bz", Tensor::zeros(1, ds));
        let gru_wr = weight(&mut p, "gru.wr", ds + dm, ds);
        let gru_br = p.add("gru.br", Tensor::zeros(1, ds));
        let gru_wn = weight(&mut p, "gru.wn", ds + dm, ds);
        let gru_bn = p.add("gru.bn", Tensor::zeros(1, ds));
        let (emb_w1, emb_w2) = match hyper.embedding_mode {
            EmbeddingMode::Identity => (None, None),
            EmbeddingMode::TimeProjection => (Some(weight(&mut p, "emb.w", ds, ds)), None),
            EmbeddingMode::NeighborMean => (
                Some(weight(&mut p, "emb.w1", ds, ds)),
                Some(weight(&mut p, "emb.w2", ds, ds)),
            ),
        };
        let dec_w1 = weight(&mut p, "dec.w1", 2 * ds, h);
        let dec_b1 = p.add("dec.b1", Tensor::zeros(1, h));
        let dec_w2 = weight(&mut p, "dec.w2", h, 1);
        let dec_b2 = p.add("dec.b2", Tensor::zeros(1, 1));
        Ok(Self {
            params: p,
            ids: Ids {
                msg_w1,
                msg_b1,
                msg_w2,
                msg_b2,
                gru_wz,
                gru_bz,
                gru_wr,
                gru_br,
                gru_wn,
                gru_bn,
                emb_w1,
                emb_w2,
                dec_w1,
                dec_b1,
                dec_w2,
                dec_b2,
            },
            memory_dim: ds,
            message_dim: dm,
            feature_dim,
            mode: hyper.embedding_mode,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Value of a named parameter.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.find(name).map(|id| &self.params.get(id).value)
    }

    /// Replaces a named parameter's value, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        let p = self.params.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "{name}: {:?} vs {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn memory_dim(&self) -> usize {
        self.memory_dim
    }

    pub fn message_dim(&self) -> usize {
        self.message_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn embedding_mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub(crate) fn message_input_width(&self) -> usize {
        2 * self.memory_dim + self.feature_dim + 1
    }
}

/// Tape variables of one model binding, with the layer builders.
pub(crate) struct Net<'m> {
    pub model: &'m Model,
    pub bind: Bindings,
}

impl<'m> Net<'m> {
    pub fn bind(model: &'m Model, tape: &mut Tape) -> Self {
        Self {
            model,
            bind: model.params.bind(tape),
        }
    }

    fn v(&self, id: ParamId) -> Var {
        self.bind.var(id)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = tape.matmul(x, self.v(w))?;
        tape.add_row(y, self.v(b))
    }

    /// Rows of `[s_self, s_other, features, φ(Δt)]` to message rows.
    pub fn message(&self, tape: &mut Tape, inputs: Var) -> Result<Var> {
        let ids = &self.model.ids;
        let h = self.linear(tape, inputs, ids.msg_w1, ids.msg_b1)?;
        let h = tape.relu(h)?;
        let m = self.linear(tape, h, ids.msg_w2, ids.msg_b2)?;
        tape.tanh(m)
    }

    pub fn gru(&self, tape: &mut Tape, s: Var, m: Var) -> Result<Var> {
        let ids = &self.model.ids;
        let sm = tape.concat_cols(&[s, m])?;
        let z = self.linear(tape, sm, ids.gru_wz, ids.gru_bz)?;
        let z = tape.sigmoid(z)?;
        let r = self.linear(tape, sm, ids.gru_wr, ids.gru_br)?;
        let r = tape.sigmoid(r)?;
        let rs = tape.hadamard(r, s)?;
        let rsm = tape.concat_cols(&[rs, m])?;
        let n = self.linear(tape, rsm, ids.gru_wn, ids.gru_bn)?;
        let n = tape.tanh(n)?;
        let keep = tape.affine(z, -1.0, 1.0)?;
        let a = tape.hadamard(keep, s)?;
        let b = tape.hadamard(z, n)?;
        tape.add(a, b)
    }

    /// Embeddings of gathered memory rows.
    ///
    /// `time_factor` holds `1 + φ(t − t⁻)` per row (time projection) and
    /// `neighbor_mean` the mean neighbor memory per row (neighbor mean).
    pub fn embed(
        &self,
        tape: &mut Tape,
        rows: Var,
        time_factor: Option<Var>,
        neighbor_mean: Option<Var>,
    ) -> Result<Var> {
        let ids = &self.model.ids;
        match self.model.mode {
            EmbeddingMode::Identity => Ok(rows),
            EmbeddingMode::TimeProjection => {
                let w = self.v(ids.emb_w1.expect("time projection weight"));
                let p = tape.matmul(rows, w)?;
                let f =
                    time_factor.ok_or_else(|| Error::arg("time projection needs time factors"))?;
                tape.hadamard(p, f)
            }
            EmbeddingMode::NeighborMean => {
                let w1 = self.v(ids.emb_w1.expect("neighbor weight"));
                let w2 = self.v(ids.emb_w2.expect("neighbor weight"));
                let own = tape.matmul(rows, w1)?;
                let nm =
                    neighbor_mean.ok_or_else(|| Error::arg("neighbor_mean needs neighbor rows"))?;
                let agg = tape.matmul(nm, w2)?;
                tape.add(own, agg)
            }
        }
    }

    /// Embeddings at zero elapsed time with an empty neighborhood.
    pub fn embed_plain(&self, tape: &mut Tape, rows: Var) -> Result<Var> {
        let shape = tape.shape(rows);
        let ones = tape.leaf(Tensor::filled(shape.0, shape.1, 1.0));
        let zeros = tape.leaf(Tensor::zeros(shape.0, shape.1));
        self.embed(tape, rows, Some(ones), Some(zeros))
    }

    /// Logit column for row-aligned source and destination embeddings.
    pub fn decode(&self, tape: &mut Tape, hs: Var, hd: Var) -> Result<Var> {
        let ids = &self.model.ids;
        let z = tape.concat_cols(&[hs, hd])?;
        let h = self.linear(tape, z, ids.dec_w1, ids.dec_b1)?;
        let h = tape.relu(h)?;
        self.linear(tape, h, ids.dec_w2, ids.dec_b2)
    }
}

fn row_input(name: &str, x: &[f64], width: usize) -> Result<Tensor> {
    if x.len() != width {
        return Err(Error::dim(format!(
            "{name} has {} entries, model expects {width}",
            x.len()
        )));
    }
    Tensor::new(1, width, x.to_vec())
}

/// Message for endpoint `i` of an event: `MLP([s_i, s_j, e, φ(Δt)])`.
pub fn message_fn(
    model: &Model,
    s_i: &[f64],
    s_j: &[f64],
    features: &[f64],
    dt: f64,
) -> Result<Tensor> {
    if dt.is_nan() || dt < 0.0 {
        return Err(Error::arg(format!("negative time gap {dt}")));
    }
    let ds = model.memory_dim;
    row_input("s_i", s_i, ds)?;
    row_input("s_j", s_j, ds)?;
    row_input("features", features, model.feature_dim)?;
    let mut x = Vec::with_capacity(model.message_input_width());
    x.extend_from_slice(s_i);
    x.extend_from_slice(s_j);
    x.extend_from_slice(features);
    x.push(time_encoding(dt));
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let inputs = tape.leaf(Tensor::new(1, x.len(), x)?);
    let m = net.message(&mut tape, inputs)?;
    Ok(tape.value(m).clone())
}

/// One GRU step from state `s` with message `m`.
pub fn memory_update(model: &Model, s: &[f64], m: &[f64]) -> Result<Tensor> {
    let s = row_input("state", s, model.memory_dim)?;
    let m = row_input("message", m, model.message_dim)?;
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let (s, m) = (tape.leaf(s), tape.leaf(m));
    let out = net.gru(&mut tape, s, m)?;
    Ok(tape.value(out).clone())
}

/// Embedding of vertex `v` at time `t` from the current memory store.
pub fn embed(model: &Model, v: usize, mem: &super::MemoryStore, t: f64) -> Result<Tensor> {
    if v >= mem.num_vertices() {
        return Err(Error::arg(format!(
            "vertex {v} outside {} vertices",
            mem.num_vertices()
        )));
    }
    if mem.dim() != model.memory_dim {
        return Err(Error::dim(format!(
            "memory width {} vs model {}",
            mem.dim(),
            model.memory_dim
        )));
    }
    let ds = model.memory_dim;
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let rows = tape.leaf(Tensor::row_vector(mem.state(v)));
    let dt = t - mem.last_update(v);
    if dt < 0.0 {
        return Err(Error::arg(format!(
            "embedding time {t} precedes last update"
        )));
    }
    let factor = tape.leaf(Tensor::filled(1, ds, 1.0 + time_encoding(dt)));
    let mut mean = vec![0.0; ds];
    let nbrs: Vec<usize> = mem.neighbors(v).collect();
    for &u in &nbrs {
        for (a, x) in mean.iter_mut().zip(mem.state(u)) {
            *a += x / nbrs.len() as f64;
        }
    }
    let mean = tape.leaf(Tensor::row_vector(&mean));
    let h = net.embed(&mut tape, rows, Some(factor), Some(mean))?;
    Ok(tape.value(h).clone())
}

/// Link probability `σ(MLP([h_i, h_j]))`.
pub fn decode_link(model: &Model, h_i: &[f64], h_j: &[f64]) -> Result<f64> {
    let hi = row_input("h_i", h_i, model.memory_dim)?;
    let hj = row_input("h_j", h_j, model.memory_dim)?;
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape);
    let (hi, hj) = (tape.leaf(hi), tape.leaf(hj));
    let z = net.decode(&mut tape, hi, hj)?;
    Ok(crate::numerics::sigmoid(tape.value(z).item()))
}
