//! Max pooling and nearest-neighbor upsampling, factor 2.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor3};

/// Halve the length, keeping the max of each adjacent pair. Ties pick the
/// earlier index. Returns the pooled tensor and, per output element, a flag
/// for which of the two inputs won (0 = left, 1 = right).
pub fn maxpool2_forward<T: Real>(input: &Tensor3<T>) -> Result<(Tensor3<T>, Vec<u8>)> {
    if input.len % 2 != 0 {
        return Err(Error::Shape(format!(
            "max pool needs an even length, got {}",
            input.len
        )));
    }
    let out_len = input.len / 2;
    let mut out = Tensor3::zeros(input.batch, input.channels, out_len);
    let mut argmax = vec![0u8; input.batch * input.channels * out_len];
    for b in 0..input.batch {
        for c in 0..input.channels {
            let x = input.row(b, c);
            let start = (b * input.channels + c) * out_len;
            for t in 0..out_len {
                let (a, v) = (x[2 * t], x[2 * t + 1]);
                if v > a {
                    out.data[start + t] = v;
                    argmax[start + t] = 1;
                } else {
                    out.data[start + t] = a;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient to the input position that won the max.
pub fn maxpool2_backward<T: Real>(
    grad_out: &Tensor3<T>,
    argmax: &[u8],
    input_len: usize,
) -> Tensor3<T> {
    let mut grad_in = Tensor3::zeros(grad_out.batch, grad_out.channels, input_len);
    for b in 0..grad_out.batch {
        for c in 0..grad_out.channels {
            let start_out = (b * grad_out.channels + c) * grad_out.len;
            let start_in = (b * grad_out.channels + c) * input_len;
            for t in 0..grad_out.len {
                let winner = argmax[start_out + t] as usize;
                grad_in.data[start_in + 2 * t + winner] = grad_out.data[start_out + t];
            }
        }
    }
    grad_in
}

/// Repeat every sample twice.
pub fn upsample2_forward<T: Real>(input: &Tensor3<T>) -> Tensor3<T> {
    let out_len = input.len * 2;
    let mut out = Tensor3::zeros(input.batch, input.channels, out_len);
    for b in 0..input.batch {
        for c in 0..input.channels {
            let x = input.row(b, c);
            let start = (b * input.channels + c) * out_len;
            for (t, &v) in x.iter().enumerate() {
                out.data[start + 2 * t] = v;
                out.data[start + 2 * t + 1] = v;
            }
        }
    }
    out
}

/// Each input sample fed two outputs; sum their gradients.
pub fn upsample2_backward<T: Real>(grad_out: &Tensor3<T>) -> Result<Tensor3<T>> {
    if grad_out.len % 2 != 0 {
        return Err(Error::Shape(
            "upsample backward needs an even gradient length".into(),
        ));
    }
    let in_len = grad_out.len / 2;
    let mut grad_in = Tensor3::zeros(grad_out.batch, grad_out.channels, in_len);
    for b in 0..grad_out.batch {
        for c in 0..grad_out.channels {
            let gy = grad_out.row(b, c);
            let start = (b * grad_out.channels + c) * in_len;
            for t in 0..in_len {
                grad_in.data[start + t] = gy[2 * t] + gy[2 * t + 1];
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_keeps_pair_max_with_early_ties() {
        let t = Tensor3::from_vec(1, 1, 4, vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let (out, argmax) = maxpool2_forward(&t).unwrap();
        assert_eq!(out.data, vec![3.0, 2.0]);
        assert_eq!(argmax, vec![1, 0]);
    }

    #[test]
    fn pool_rejects_odd_length() {
        let t = Tensor3::<f64>::zeros(1, 1, 5);
        assert!(matches!(maxpool2_forward(&t), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_repeats_samples() {
        let t = Tensor3::from_vec(1, 1, 2, vec![5.0, 7.0]).unwrap();
        assert_eq!(upsample2_forward(&t).data, vec![5.0, 5.0, 7.0, 7.0]);
    }

    #[test]
    fn pool_then_upsample_preserves_length() {
        let t = Tensor3::from_fn(2, 3, 8, |b, c, l| (b + c + l) as f64);
        let (pooled, _) = maxpool2_forward(&t).unwrap();
        let restored = upsample2_forward(&pooled);
        assert_eq!(restored.len, t.len);
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let t = Tensor3::from_vec(1, 1, 4, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let (_, argmax) = maxpool2_forward(&t).unwrap();
        let gy = Tensor3::from_vec(1, 1, 2, vec![10.0, 20.0]).unwrap();
        let gx = maxpool2_backward(&gy, &argmax, 4);
        assert_eq!(gx.data, vec![0.0, 10.0, 20.0, 0.0]);
    }

    #[test]
    fn upsample_backward_sums_pairs() {
        let gy = Tensor3::from_vec(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gx = upsample2_backward(&gy).unwrap();
        assert_eq!(gx.data, vec![3.0, 7.0]);
    }
}
