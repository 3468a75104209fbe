use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::tape::{Gradients, Tape, Var};
use crate::numerics::tensor::Tensor;

/// A named learnable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.rows(), p.value.cols());
        }
    }

    /// All gradients concatenated in parameter order.
    pub fn flat_grad(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    /// All values concatenated in parameter order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Records every parameter value as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        for p in &self.params {
            write_tensor(&mut w, &p.name, &p.value)?;
        }
        Ok(())
    }

    /// Loads values into an existing set, matching by name and shape.
    pub fn load(&mut self, r: impl BufRead) -> Result<()> {
        for (name, value) in read_tensors(r)? {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            let p = self.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?} in file, {:?} in model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

/// Tape variables for one binding of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Adds the adjoints of the bound leaves into the parameters' `grad`.
    pub fn accumulate(&self, grads: &Gradients, params: &mut ParamSet) {
        for (p, &v) in params.params.iter_mut().zip(&self.vars) {
            if let Some(g) = grads.wrt(v) {
                p.grad.add_assign(g);
            }
        }
    }
}

/// Plain gradient descent: `value -= lr * grad`, then zero the gradients.
///
/// The step is refused (nothing is modified) if `lr` is not a positive finite
/// number or if any gradient entry is non-finite.
pub fn sgd_step(params: &mut ParamSet, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::arg(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite gradient for {}",
            p.name
        )));
    }
    for p in params.iter_mut() {
        let updated = p.value.zip(&p.grad, |v, g| v - lr * g);
        if !updated.is_finite() {
            return Err(Error::numeric(format!("update overflowed {}", p.name)));
        }
        p.value = updated;
    }
    params.zero_grads();
    Ok(())
}

/// Writes one named tensor: a `name,rows,cols` text line followed by
/// `rows * cols` little-endian `f64` values.
pub fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    if name.contains([',', '\n']) {
        return Err(Error::Format(format!(
            "tensor name {name:?} contains a separator"
        )));
    }
    writeln!(w, "{name},{},{}", t.rows(), t.cols())?;
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads tensors written by [`write_tensor`] until end of input.
pub fn read_tensors(mut r: impl BufRead) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    let mut header = Vec::new();
    loop {
        header.clear();
        if r.read_until(b'\n', &mut header)? == 0 {
            break;
        }
        let line = std::str::from_utf8(&header)
            .map_err(|_| Error::Format("header is not UTF-8".into()))?
            .trim_end_matches('\n');
        let mut fields = line.split(',');
        let (Some(name), Some(rows), Some(cols), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Format(format!("bad header {line:?}")));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad dimension {s:?} in {line:?}")))
        };
        let (rows, cols) = (parse(rows)?, parse(cols)?);
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated data for {name}")))?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name.to_string(), Tensor::from_raw(rows, cols, data)));
    }
    Ok(out)
}
