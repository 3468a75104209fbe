use crate::error::{Error, Result};

/// Step size `μ / (L·√(K·t))` for coherence bound `μ`, Lipschitz constant
/// `L`, `K` batches per epoch and epoch `t ≥ 1`.
pub fn lr_schedule(mu: f64, lipschitz: f64, batches: usize, epoch: usize) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite() && lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::arg(format!(
            "need positive mu and L, got {mu} and {lipschitz}"
        )));
    }
    if batches == 0 || epoch == 0 {
        return Err(Error::arg("batches per epoch and epoch index start at 1"));
    }
    Ok(mu / (lipschitz * ((batches * epoch) as f64).sqrt()))
}
