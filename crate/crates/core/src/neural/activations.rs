//! Elementwise activations with their backward passes.

use super::tensor::{Real, Tensor3};

/// `max(0, x)`.
pub fn relu<T: Real>(input: &Tensor3<T>) -> Tensor3<T> {
    let mut out = input.clone();
    for x in &mut out.data {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
    out
}

/// Routes gradient only where the forward input was positive.
pub fn relu_backward<T: Real>(input: &Tensor3<T>, grad_out: &Tensor3<T>) -> Tensor3<T> {
    let mut grad_in = grad_out.clone();
    for (gx, &x) in grad_in.data.iter_mut().zip(&input.data) {
        if x <= T::zero() {
            *gx = T::zero();
        }
    }
    grad_in
}

/// Numerically stable logistic: the exponential argument is always negative.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor3<T>) -> Tensor3<T> {
    let mut out = input.clone();
    for x in &mut out.data {
        *x = sigmoid_scalar(*x);
    }
    out
}

/// Backward given the forward *output* `p`: `dL/dx = dL/dp * p * (1 - p)`.
pub fn sigmoid_backward<T: Real>(output: &Tensor3<T>, grad_out: &Tensor3<T>) -> Tensor3<T> {
    let mut grad_in = grad_out.clone();
    for (gx, &p) in grad_in.data.iter_mut().zip(&output.data) {
        *gx = *gx * p * (T::one() - p);
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negative() {
        let t = Tensor3::from_vec(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let lo = sigmoid_scalar(-800.0f64);
        assert!(lo >= 0.0 && lo < 1e-300 && lo.is_finite());
        let hi = sigmoid_scalar(800.0f64);
        assert!(hi == 1.0 && hi.is_finite());
    }

    #[test]
    fn sigmoid_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.5;
            let naive = 1.0 / (1.0 + (-x).exp());
            assert!((sigmoid_scalar(x) - naive).abs() < 1e-15);
        }
    }
}
