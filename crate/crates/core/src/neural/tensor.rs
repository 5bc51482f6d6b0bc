//! Minimal batched 1-D tensor and the scalar abstraction shared by all layers.

use crate::error::{Error, Result};

/// Scalar type the network runs in: `f32` for training and inference,
/// `f64` for gradient-check builds.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64_(self) -> f64;
    fn from_f32_(x: f32) -> Self;
    fn to_f32_(self) -> f32;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64_(self) -> f64 {
        self as f64
    }
    fn from_f32_(x: f32) -> Self {
        x
    }
    fn to_f32_(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64_(self) -> f64 {
        self
    }
    fn from_f32_(x: f32) -> Self {
        x as f64
    }
    fn to_f32_(self) -> f32 {
        self as f32
    }
}

/// Dense `batch x channels x length` tensor, row-major, each channel row
/// contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Tensor3 {
            batch,
            channels,
            len,
            data: vec![T::zero(); batch * channels * len],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, len: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * channels * len {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {batch}x{channels}x{len}",
                data.len()
            )));
        }
        Ok(Tensor3 {
            batch,
            channels,
            len,
            data,
        })
    }

    pub fn from_fn(
        batch: usize,
        channels: usize,
        len: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * channels * len);
        for b in 0..batch {
            for c in 0..channels {
                for l in 0..len {
                    data.push(f(b, c, l));
                }
            }
        }
        Tensor3 {
            batch,
            channels,
            len,
            data,
        }
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, l: usize) -> T {
        self.data[(b * self.channels + c) * self.len + l]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, l: usize) -> &mut T {
        &mut self.data[(b * self.channels + c) * self.len + l]
    }

    /// Contiguous view of one `(batch, channel)` row.
    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let start = (b * self.channels + c) * self.len;
        &self.data[start..start + self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let start = (b * self.channels + c) * self.len;
        &mut self.data[start..start + self.len]
    }

    /// Error when any element is NaN or infinite; layer boundaries call this.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{context}: tensor {}x{}x{} contains NaN or Inf",
                self.batch, self.channels, self.len
            )));
        }
        Ok(())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&self, other: &Tensor3<T>) -> Result<Tensor3<T>> {
        if self.batch != other.batch || self.len != other.len {
            return Err(Error::Shape(format!(
                "concat mismatch: {}x{}x{} vs {}x{}x{}",
                self.batch, self.channels, self.len, other.batch, other.channels, other.len
            )));
        }
        let channels = self.channels + other.channels;
        let mut out = Tensor3::zeros(self.batch, channels, self.len);
        for b in 0..self.batch {
            for c in 0..self.channels {
                out.row_mut(b, c).copy_from_slice(self.row(b, c));
            }
            for c in 0..other.channels {
                out.row_mut(b, self.channels + c)
                    .copy_from_slice(other.row(b, c));
            }
        }
        Ok(out)
    }

    /// Split a channel-concatenated gradient back into its two parts.
    pub fn split_channels(&self, first: usize) -> Result<(Tensor3<T>, Tensor3<T>)> {
        if first > self.channels {
            return Err(Error::Shape(format!(
                "cannot split {} channels at {first}",
                self.channels
            )));
        }
        let second = self.channels - first;
        let mut a = Tensor3::zeros(self.batch, first, self.len);
        let mut b_t = Tensor3::zeros(self.batch, second, self.len);
        for b in 0..self.batch {
            for c in 0..first {
                a.row_mut(b, c).copy_from_slice(self.row(b, c));
            }
            for c in 0..second {
                b_t.row_mut(b, c).copy_from_slice(self.row(b, first + c));
            }
        }
        Ok((a, b_t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor3::from_fn(2, 3, 4, |b, c, l| (b * 100 + c * 10 + l) as f64);
        assert_eq!(t.at(1, 2, 3), 123.0);
        assert_eq!(t.row(1, 2), &[120.0, 121.0, 122.0, 123.0]);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor3::from_fn(2, 2, 3, |b, c, l| (b + c + l) as f32);
        let b = Tensor3::from_fn(2, 1, 3, |b, c, l| (b * c + l) as f32 * 0.5);
        let cat = a.concat_channels(&b).unwrap();
        assert_eq!(cat.channels, 3);
        let (a2, b2) = cat.split_channels(2).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn non_finite_rejected() {
        let mut t = Tensor3::<f32>::zeros(1, 1, 4);
        assert!(t.ensure_finite("test").is_ok());
        t.data[2] = f32::NAN;
        assert!(t.ensure_finite("test").is_err());
    }
}
