//! Per-channel batch normalization over `(batch, length)`.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor3};

pub const BN_EPSILON: f64 = 1e-5;
/// Fraction of the old running statistic kept on each training batch.
pub const BN_MOMENTUM: f64 = 0.9;

/// Learnable gain/shift plus running statistics for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gain: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNormParams<T> {
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gain: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }
}

/// Values cached by the training-mode forward pass for backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    /// Normalized input before gain/shift.
    pub xhat: Tensor3<T>,
    pub inv_std: Vec<T>,
}

/// Training-mode forward: normalize with batch statistics (biased variance)
/// and fold the batch into the running statistics. Requires batch size >= 2.
pub fn batchnorm_forward_train<T: Real>(
    input: &Tensor3<T>,
    params: &mut BatchNormParams<T>,
) -> Result<(Tensor3<T>, BatchNormCache<T>)> {
    check_channels(input, params)?;
    if input.batch < 2 {
        return Err(Error::Shape(
            "batch norm in train mode needs batch size >= 2".into(),
        ));
    }
    let n = (input.batch * input.len) as f64;
    let eps = T::from_f64(BN_EPSILON);
    let momentum = T::from_f64(BN_MOMENTUM);
    let one_minus = T::one() - momentum;

    let mut out = Tensor3::zeros(input.batch, input.channels, input.len);
    let mut xhat = Tensor3::zeros(input.batch, input.channels, input.len);
    let mut inv_std = vec![T::zero(); input.channels];

    for c in 0..input.channels {
        let mut sum = T::zero();
        for b in 0..input.batch {
            for &x in input.row(b, c) {
                sum += x;
            }
        }
        let mean = sum / T::from_f64(n);
        let mut var_sum = T::zero();
        for b in 0..input.batch {
            for &x in input.row(b, c) {
                let d = x - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum / T::from_f64(n);
        let istd = T::one() / (var + eps).sqrt();
        inv_std[c] = istd;

        params.running_mean[c] = momentum * params.running_mean[c] + one_minus * mean;
        params.running_var[c] = momentum * params.running_var[c] + one_minus * var;

        let (g, s) = (params.gain[c], params.shift[c]);
        for b in 0..input.batch {
            let x_row = input.row(b, c);
            let start = (b * input.channels + c) * input.len;
            for (l, &x) in x_row.iter().enumerate() {
                let xh = (x - mean) * istd;
                xhat.data[start + l] = xh;
                out.data[start + l] = g * xh + s;
            }
        }
    }
    Ok((out, BatchNormCache { xhat, inv_std }))
}

/// Inference-mode forward using the running statistics.
pub fn batchnorm_forward_infer<T: Real>(
    input: &Tensor3<T>,
    params: &BatchNormParams<T>,
) -> Result<Tensor3<T>> {
    check_channels(input, params)?;
    let eps = T::from_f64(BN_EPSILON);
    let mut out = Tensor3::zeros(input.batch, input.channels, input.len);
    for c in 0..input.channels {
        let istd = T::one() / (params.running_var[c] + eps).sqrt();
        let (mean, g, s) = (params.running_mean[c], params.gain[c], params.shift[c]);
        for b in 0..input.batch {
            let x_row = input.row(b, c);
            let start = (b * input.channels + c) * input.len;
            for (l, &x) in x_row.iter().enumerate() {
                out.data[start + l] = g * (x - mean) * istd + s;
            }
        }
    }
    Ok(out)
}

/// Backward through the training-mode normalization.
pub fn batchnorm_backward<T: Real>(
    params: &BatchNormParams<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor3<T>,
) -> Result<(Tensor3<T>, Vec<T>, Vec<T>)> {
    let xhat = &cache.xhat;
    if grad_out.batch != xhat.batch || grad_out.channels != xhat.channels || grad_out.len != xhat.len
    {
        return Err(Error::Shape("batch norm backward shape mismatch".into()));
    }
    let n = T::from_f64((xhat.batch * xhat.len) as f64);
    let mut grad_in = Tensor3::zeros(xhat.batch, xhat.channels, xhat.len);
    let mut grad_gain = vec![T::zero(); xhat.channels];
    let mut grad_shift = vec![T::zero(); xhat.channels];

    for c in 0..xhat.channels {
        let mut sum_gy = T::zero();
        let mut sum_gy_xhat = T::zero();
        for b in 0..xhat.batch {
            let gy_row = grad_out.row(b, c);
            let xh_row = xhat.row(b, c);
            for (&gy, &xh) in gy_row.iter().zip(xh_row) {
                sum_gy += gy;
                sum_gy_xhat += gy * xh;
            }
        }
        grad_shift[c] = sum_gy;
        grad_gain[c] = sum_gy_xhat;

        let scale = params.gain[c] * cache.inv_std[c] / n;
        for b in 0..xhat.batch {
            let gy_row = grad_out.row(b, c);
            let xh_row = xhat.row(b, c);
            let start = (b * xhat.channels + c) * xhat.len;
            for l in 0..xhat.len {
                grad_in.data[start + l] =
                    scale * (n * gy_row[l] - sum_gy - xh_row[l] * sum_gy_xhat);
            }
        }
    }
    Ok((grad_in, grad_gain, grad_shift))
}

fn check_channels<T: Real>(input: &Tensor3<T>, params: &BatchNormParams<T>) -> Result<()> {
    if input.channels != params.channels() {
        return Err(Error::Shape(format!(
            "batch norm expects {} channels, got {}",
            params.channels(),
            input.channels
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = Tensor3::from_fn(4, 3, 10, |_, c, _| rng.gen_range(-2.0..2.0) + c as f64);
        let mut params = BatchNormParams::identity(3);
        let (out, _) = batchnorm_forward_train(&input, &mut params).unwrap();
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend_from_slice(out.row(b, c));
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn infer_with_identity_stats_passes_through() {
        let input = Tensor3::from_fn(2, 2, 5, |b, c, l| (b + c + l) as f64 * 0.1);
        let params = BatchNormParams::identity(2);
        let out = batchnorm_forward_infer(&input, &params).unwrap();
        for (a, b) in out.data.iter().zip(input.data.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_of_one_is_rejected_in_train_mode() {
        let input = Tensor3::<f64>::zeros(1, 2, 5);
        let mut params = BatchNormParams::identity(2);
        assert!(batchnorm_forward_train(&input, &mut params).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = Tensor3::from_fn(4, 2, 10, |_, _, _| rng.gen_range(-1.0..1.0));
        let mut params = BatchNormParams::identity(2);
        params.gain = vec![1.3, 0.7];
        params.shift = vec![0.2, -0.4];

        // random-cotangent loss L = sum(G . out), so dL/dout = G
        let cotangent = Tensor3::from_fn(4, 2, 10, |_, _, _| rng.gen_range(-1.0..1.0));
        let loss_of = |x: &Tensor3<f64>| {
            let mut p = params.clone();
            let (out, _) = batchnorm_forward_train(x, &mut p).unwrap();
            out.data
                .iter()
                .zip(&cotangent.data)
                .map(|(&v, &g)| v * g)
                .sum::<f64>()
        };
        let mut p = params.clone();
        let (_, cache) = batchnorm_forward_train(&input, &mut p).unwrap();
        let (grad_in, _, _) = batchnorm_backward(&params, &cache, &cotangent).unwrap();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for idx in (0..input.data.len()).step_by(7) {
            let mut plus = input.clone();
            plus.data[idx] += h;
            let mut minus = input.clone();
            minus.data[idx] -= h;
            let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let ana = grad_in.data[idx];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
