//! Binary cross-entropy over per-sample probabilities.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor3};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before the logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient w.r.t. the probabilities.
///
/// `loss = mean(-[y ln p + (1 - y) ln(1 - p)])` with `p` clamped; where the
/// clamp is active the gradient is zero (the clamp's own derivative).
pub fn bce_loss<T: Real>(probs: &Tensor3<T>, target: &Tensor3<T>) -> Result<(T, Tensor3<T>)> {
    if probs.batch != target.batch || probs.channels != target.channels || probs.len != target.len
    {
        return Err(Error::Shape(format!(
            "bce shapes differ: {}x{}x{} vs {}x{}x{}",
            probs.batch, probs.channels, probs.len, target.batch, target.channels, target.len
        )));
    }
    let lo = T::from_f64(BCE_CLAMP);
    let hi = T::one() - lo;
    let n = T::from_f64(probs.data.len() as f64);

    let mut grad = Tensor3::zeros(probs.batch, probs.channels, probs.len);
    let mut total = T::zero();
    for (i, (&p, &y)) in probs.data.iter().zip(&target.data).enumerate() {
        let clamped = p < lo || p > hi;
        let pc = if p < lo {
            lo
        } else if p > hi {
            hi
        } else {
            p
        };
        total += -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        if !clamped {
            grad.data[i] = (-y / pc + (T::one() - y) / (T::one() - pc)) / n;
        }
    }
    Ok((total / n, grad))
}
