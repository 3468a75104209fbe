use crate::error::{Error, Result};
use crate::numerics::sigmoid;

/// Scalar fusion weight `γ = σ(raw)`, or a fixed value when pinned.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionGate {
    raw: f64,
    pinned: Option<f64>,
    grad: f64,
}

impl FusionGate {
    /// Learnable gate starting at `γ = gamma_init`.
    pub fn new(gamma_init: f64) -> Result<Self> {
        if !(gamma_init > 0.0 && gamma_init < 1.0) {
            return Err(Error::arg(format!(
                "initial gamma must lie in (0,1), got {gamma_init}"
            )));
        }
        Ok(Self {
            raw: (gamma_init / (1.0 - gamma_init)).ln(),
            pinned: None,
            grad: 0.0,
        })
    }

    /// Constant gate, which may sit on the endpoints 0 or 1.
    pub fn pinned(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::arg(format!(
                "pinned gamma must lie in [0,1], got {gamma}"
            )));
        }
        Ok(Self {
            raw: 0.0,
            pinned: Some(gamma),
            grad: 0.0,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.pinned.unwrap_or_else(|| sigmoid(self.raw))
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn set_raw(&mut self, raw: f64) {
        self.raw = raw;
    }

    pub fn pinned_value(&self) -> Option<f64> {
        self.pinned
    }

    pub fn grad(&self) -> f64 {
        self.grad
    }

    pub(crate) fn accumulate(&mut self, g: f64) {
        self.grad += g;
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad = 0.0;
    }

    /// `raw -= lr · grad`, then clears the gradient. No-op when pinned.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !self.grad.is_finite() {
            return Err(Error::numeric("non-finite gate gradient"));
        }
        if self.pinned.is_none() {
            self.raw -= lr * self.grad;
        }
        self.grad = 0.0;
        Ok(())
    }
}
