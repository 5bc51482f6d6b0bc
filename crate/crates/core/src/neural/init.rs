//! Weight initialization.

use rand::Rng;

use super::tensor::Real;

/// He-uniform: U(-b, b) with `b = sqrt(6 / fan_in)`. Draws in f64 so the
/// same seed yields the same weights in every precision (up to rounding).
pub fn he_uniform<T: Real>(weights: &mut [T], fan_in: usize, rng: &mut impl Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for w in weights {
        *w = T::from_f64(rng.gen_range(-bound..bound));
    }
}
