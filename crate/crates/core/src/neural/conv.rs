//! Same-padded 1-D convolution, forward and backward.
//!
//! Kernels are written as axpy/dot passes over contiguous rows so they
//! autovectorize; parallel builds split work over independent output rows,
//! which keeps results bit-identical to the sequential path.

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk_mut;

use super::tensor::{Real, Tensor3};

/// Convolution weights `[out_ch x in_ch x k]` (flat, row-major) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        ConvParams {
            out_ch,
            in_ch,
            kernel,
            weights: vec![T::zero(); out_ch * in_ch * kernel],
            bias: vec![T::zero(); out_ch],
        }
    }

    #[inline]
    fn weight(&self, o: usize, c: usize, j: usize) -> T {
        self.weights[(o * self.in_ch + c) * self.kernel + j]
    }

    fn check(&self, input: &Tensor3<T>) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.weights.len() != self.out_ch * self.in_ch * self.kernel
            || self.bias.len() != self.out_ch
        {
            return Err(Error::Shape("conv parameter buffers inconsistent".into()));
        }
        if input.channels != self.in_ch {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_ch, input.channels
            )));
        }
        Ok(())
    }
}

/// `out[b,o,l] = bias[o] + sum_{c,j} w[o,c,j] * in[b,c,l+j-(k-1)/2]`,
/// zero outside bounds; output length equals input length.
pub fn conv1d_forward<T: Real>(input: &Tensor3<T>, params: &ConvParams<T>) -> Result<Tensor3<T>> {
    params.check(input)?;
    let (bsz, len) = (input.batch, input.len);
    let half = (params.kernel - 1) / 2;
    let mut out = Tensor3::zeros(bsz, params.out_ch, len);

    for_each_chunk_mut(&mut out.data, len, |row_idx, out_row| {
        let b = row_idx / params.out_ch;
        let o = row_idx % params.out_ch;
        out_row.fill(params.bias[o]);
        for c in 0..params.in_ch {
            let x_row = input.row(b, c);
            for j in 0..params.kernel {
                let w = params.weight(o, c, j);
                if w == T::zero() {
                    continue;
                }
                // out[l] += w * x[l + j - half] over the in-bounds range of l
                let off = j as isize - half as isize;
                let lo = (-off).max(0) as usize;
                let hi = (len as isize - off).min(len as isize) as usize;
                let xs = &x_row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (y, &x) in out_row[lo..hi].iter_mut().zip(xs) {
                    *y += w * x;
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of the convolution: input, weight and bias grads from the
/// output gradient and the cached forward input.
pub fn conv1d_backward<T: Real>(
    input: &Tensor3<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor3<T>,
) -> Result<(Tensor3<T>, Vec<T>, Vec<T>)> {
    params.check(input)?;
    if grad_out.batch != input.batch
        || grad_out.channels != params.out_ch
        || grad_out.len != input.len
    {
        return Err(Error::Shape(format!(
            "conv backward: grad {}x{}x{} incompatible with output {}x{}x{}",
            grad_out.batch,
            grad_out.channels,
            grad_out.len,
            input.batch,
            params.out_ch,
            input.len
        )));
    }
    let (bsz, len) = (input.batch, input.len);
    let half = (params.kernel - 1) / 2;

    // d/dx: x[t] fed out[t - j + half], so transpose the kernel offsets.
    let mut grad_in = Tensor3::zeros(bsz, params.in_ch, len);
    for_each_chunk_mut(&mut grad_in.data, len, |row_idx, gx_row| {
        let b = row_idx / params.in_ch;
        let c = row_idx % params.in_ch;
        for o in 0..params.out_ch {
            let gy_row = grad_out.row(b, o);
            for j in 0..params.kernel {
                let w = params.weight(o, c, j);
                if w == T::zero() {
                    continue;
                }
                let off = half as isize - j as isize;
                let lo = (-off).max(0) as usize;
                let hi = (len as isize - off).min(len as isize) as usize;
                let gys = &gy_row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (gx, &gy) in gx_row[lo..hi].iter_mut().zip(gys) {
                    *gx += w * gy;
                }
            }
        }
    });

    // d/dw and d/db, one output channel per task; summation order over
    // (batch, position) is fixed, so the reduction is reproducible.
    let block = params.in_ch * params.kernel;
    let mut grad_w = vec![T::zero(); params.out_ch * block];
    for_each_chunk_mut(&mut grad_w, block, |o, gw_block| {
        for b in 0..bsz {
            let gy_row = grad_out.row(b, o);
            for c in 0..params.in_ch {
                let x_row = input.row(b, c);
                for j in 0..params.kernel {
                    let off = j as isize - half as isize;
                    let lo = (-off).max(0) as usize;
                    let hi = (len as isize - off).min(len as isize) as usize;
                    let xs = &x_row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    let mut acc = T::zero();
                    for (&gy, &x) in gy_row[lo..hi].iter().zip(xs) {
                        acc += gy * x;
                    }
                    gw_block[c * params.kernel + j] += acc;
                }
            }
        }
    });

    let mut grad_b = vec![T::zero(); params.out_ch];
    for (o, gb) in grad_b.iter_mut().enumerate() {
        for b in 0..bsz {
            for &gy in grad_out.row(b, o) {
                *gb += gy;
            }
        }
    }

    Ok((grad_in, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Triple-nested-loop reference convolution, independent of the axpy path.
    pub fn conv1d_reference(input: &Tensor3<f64>, params: &ConvParams<f64>) -> Tensor3<f64> {
        let half = (params.kernel - 1) / 2;
        let mut out = Tensor3::zeros(input.batch, params.out_ch, input.len);
        for b in 0..input.batch {
            for o in 0..params.out_ch {
                for l in 0..input.len {
                    let mut acc = params.bias[o];
                    for c in 0..params.in_ch {
                        for j in 0..params.kernel {
                            let pos = l as isize + j as isize - half as isize;
                            if pos >= 0 && (pos as usize) < input.len {
                                acc += params.weight(o, c, j) * input.at(b, c, pos as usize);
                            }
                        }
                    }
                    *out.at_mut(b, o, l) = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = Tensor3::from_fn(2, 1, 5, |b, _, l| (b * 10 + l) as f64);
        let params = ConvParams {
            out_ch: 1,
            in_ch: 1,
            kernel: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        };
        let out = conv1d_forward(&input, &params).unwrap();
        assert_eq!(out.data, input.data);
    }

    #[test]
    fn zero_input_passes_bias_through() {
        let input = Tensor3::<f64>::zeros(1, 2, 4);
        let mut params = ConvParams::zeros(3, 2, 3);
        params.bias = vec![0.7, -0.1, 2.0];
        let out = conv1d_forward(&input, &params).unwrap();
        for o in 0..3 {
            assert!(out.row(0, o).iter().all(|&y| y == params.bias[o]));
        }
    }

    #[test]
    fn matches_reference_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = Tensor3::from_fn(2, 3, 8, |_, _, _| rng.gen_range(-1.0..1.0));
        let params = ConvParams {
            out_ch: 4,
            in_ch: 3,
            kernel: 3,
            weights: (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let fast = conv1d_forward(&input, &params).unwrap();
        let slow = conv1d_reference(&input, &params);
        for (a, b) in fast.data.iter().zip(slow.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let input = Tensor3::<f64>::zeros(1, 2, 4);
        let params = ConvParams::<f64>::zeros(3, 5, 3);
        assert!(matches!(
            conv1d_forward(&input, &params),
            Err(Error::Shape(_))
        ));
    }
}
