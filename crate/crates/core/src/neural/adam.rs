//! Adam with bias correction, over flat parameter blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment estimates congruent to the model's parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero-initialized moments for blocks of the given lengths.
    pub fn new(config: AdamConfig, block_lens: &[usize]) -> Self {
        AdamState {
            step: 0,
            config,
            m: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update over all parameter blocks. Gradients must be congruent to
    /// the parameters; any NaN gradient aborts with a training error.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} param blocks, {} grad blocks, {} moment blocks",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (block, grad) in grads.iter().enumerate() {
            if grad.iter().any(|g| g.is_nan()) {
                return Err(Error::Training(format!(
                    "NaN gradient in parameter block {block}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let beta1 = T::from_f64(self.config.beta1);
        let beta2 = T::from_f64(self.config.beta2);
        let eps = T::from_f64(self.config.epsilon);
        let bias1 = T::one() - beta1.powi(t);
        let bias2 = T::one() - beta2.powi(t);
        let lr = T::from_f64(self.config.learning_rate);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape("adam: block length mismatch".into()));
            }
            for i in 0..p.len() {
                let grad = g[i];
                m[i] = beta1 * m[i] + (T::one() - beta1) * grad;
                v[i] = beta2 * v[i] + (T::one() - beta2) * grad * grad;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::<f64>::new(AdamConfig::default(), &[3]);
        let mut block = vec![1.0, -2.0, 0.5];
        let before = block.clone();
        state.step(&mut [&mut block], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(block, before);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let cfg = AdamConfig::with_learning_rate(1e-3);
        let mut state = AdamState::<f64>::new(cfg, &[1]);
        let mut block = vec![0.0];
        state.step(&mut [&mut block], &[&[0.37]]).unwrap();
        // m_hat = g, v_hat = g^2 => update = lr * g / (|g| + eps) ~ lr
        assert!((block[0].abs() - 1e-3).abs() < 1e-6, "step {}", block[0]);
        assert!(block[0] < 0.0);
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig::with_learning_rate(1e-2);
        let mut state = AdamState::<f64>::new(cfg, &[1]);
        let mut x = vec![0.0];
        for _ in 0..5000 {
            let grad = 2.0 * (x[0] - 3.0);
            state.step(&mut [&mut x], &[&[grad]]).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn nan_gradient_is_training_error() {
        let mut state = AdamState::<f64>::new(AdamConfig::default(), &[1]);
        let mut block = vec![1.0];
        assert!(matches!(
            state.step(&mut [&mut block], &[&[f64::NAN]]),
            Err(Error::Training(_))
        ));
    }
}
