//! 1-D U-Net for per-sample probability of lying in a systolic complex.
//!
//! Contracting path: `depth` blocks of (conv-bn-relu) x2 followed by max
//! pooling, filter counts doubling per level. Expansive path: upsample, a
//! channel-halving conv-bn-relu, concatenation with the matching encoder
//! activation, then another double conv. A 1x1 convolution plus sigmoid
//! produces one probability per input sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::activations::{relu, relu_backward, sigmoid, sigmoid_backward};
use super::batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormCache,
    BatchNormParams,
};
use super::conv::{conv1d_backward, conv1d_forward, ConvParams};
use super::init::he_uniform;
use super::pool::{maxpool2_backward, maxpool2_forward, upsample2_backward, upsample2_forward};
use super::tensor::{Real, Tensor3};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Number of encoder levels.
    pub depth: usize,
    /// Filters at the first level; doubles per level, bottleneck at
    /// `base_filters << depth`.
    pub base_filters: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    /// Default training window length; forward accepts any length divisible
    /// by `2^depth`.
    pub input_length: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            base_filters: 16,
            kernel_size: 3,
            in_channels: 1,
            input_length: 320,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 || self.in_channels == 0 {
            return Err(Error::Shape("depth, filters and channels must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.input_length % (1 << self.depth) != 0 {
            return Err(Error::Shape(format!(
                "input length {} not divisible by 2^{}",
                self.input_length, self.depth
            )));
        }
        Ok(())
    }

    /// Filter count at encoder level `i` (bottleneck at `i == depth`).
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }
}

/// conv -> batch norm -> relu, with gradient buffers and training caches.
#[derive(Debug, Clone)]
struct ConvBn<T> {
    conv: ConvParams<T>,
    bn: BatchNormParams<T>,
    grad_w: Vec<T>,
    grad_b: Vec<T>,
    grad_gain: Vec<T>,
    grad_shift: Vec<T>,
    cache_input: Option<Tensor3<T>>,
    cache_bn: Option<BatchNormCache<T>>,
    cache_pre_relu: Option<Tensor3<T>>,
}

impl<T: Real> ConvBn<T> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl rand::Rng) -> Self {
        let mut conv = ConvParams::zeros(out_ch, in_ch, kernel);
        he_uniform(&mut conv.weights, in_ch * kernel, rng);
        ConvBn {
            conv,
            bn: BatchNormParams::identity(out_ch),
            grad_w: Vec::new(),
            grad_b: Vec::new(),
            grad_gain: Vec::new(),
            grad_shift: Vec::new(),
            cache_input: None,
            cache_bn: None,
            cache_pre_relu: None,
        }
    }

    fn forward_train(&mut self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let conv_out = conv1d_forward(x, &self.conv)?;
        self.cache_input = Some(x.clone());
        let (bn_out, bn_cache) = batchnorm_forward_train(&conv_out, &mut self.bn)?;
        self.cache_bn = Some(bn_cache);
        let out = relu(&bn_out);
        self.cache_pre_relu = Some(bn_out);
        Ok(out)
    }

    fn forward_infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let conv_out = conv1d_forward(x, &self.conv)?;
        Ok(relu(&batchnorm_forward_infer(&conv_out, &self.bn)?))
    }

    fn backward(&mut self, grad_out: &Tensor3<T>) -> Result<Tensor3<T>> {
        let pre_relu = self
            .cache_pre_relu
            .take()
            .ok_or_else(|| Error::Training("backward before forward".into()))?;
        let bn_cache = self.cache_bn.take().unwrap();
        let input = self.cache_input.take().unwrap();

        let grad_bn_out = relu_backward(&pre_relu, grad_out);
        let (grad_conv_out, grad_gain, grad_shift) =
            batchnorm_backward(&self.bn, &bn_cache, &grad_bn_out)?;
        let (grad_in, grad_w, grad_b) = conv1d_backward(&input, &self.conv, &grad_conv_out)?;
        self.grad_w = grad_w;
        self.grad_b = grad_b;
        self.grad_gain = grad_gain;
        self.grad_shift = grad_shift;
        Ok(grad_in)
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        out.push(&mut self.conv.weights);
        out.push(&mut self.conv.bias);
        out.push(&mut self.bn.gain);
        out.push(&mut self.bn.shift);
    }

    fn collect_param_refs<'a>(&'a self, out: &mut Vec<&'a Vec<T>>) {
        out.push(&self.conv.weights);
        out.push(&self.conv.bias);
        out.push(&self.bn.gain);
        out.push(&self.bn.shift);
    }

    fn take_grads(&mut self, out: &mut Vec<Vec<T>>) {
        out.push(std::mem::take(&mut self.grad_w));
        out.push(std::mem::take(&mut self.grad_b));
        out.push(std::mem::take(&mut self.grad_gain));
        out.push(std::mem::take(&mut self.grad_shift));
    }

    fn collect_stats<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        out.push(&mut self.bn.running_mean);
        out.push(&mut self.bn.running_var);
    }

    fn collect_stat_refs<'a>(&'a self, out: &mut Vec<&'a Vec<T>>) {
        out.push(&self.bn.running_mean);
        out.push(&self.bn.running_var);
    }
}

/// Two conv-bn-relu sequences.
#[derive(Debug, Clone)]
struct DoubleConv<T> {
    a: ConvBn<T>,
    b: ConvBn<T>,
}

impl<T: Real> DoubleConv<T> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl rand::Rng) -> Self {
        DoubleConv {
            a: ConvBn::new(in_ch, out_ch, kernel, rng),
            b: ConvBn::new(out_ch, out_ch, kernel, rng),
        }
    }

    fn forward_train(&mut self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let h = self.a.forward_train(x)?;
        self.b.forward_train(&h)
    }

    fn forward_infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.b.forward_infer(&self.a.forward_infer(x)?)
    }

    fn backward(&mut self, grad_out: &Tensor3<T>) -> Result<Tensor3<T>> {
        let g = self.b.backward(grad_out)?;
        self.a.backward(&g)
    }
}

/// Upsample, channel-halving conv-bn-relu, skip concat, double conv.
#[derive(Debug, Clone)]
struct UpBlock<T> {
    reduce: ConvBn<T>,
    fuse: DoubleConv<T>,
}

/// Full network state: parameters, running statistics and training caches.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    pub config: UNetConfig,
    pub train_mode: bool,
    encoders: Vec<DoubleConv<T>>,
    bottleneck: DoubleConv<T>,
    /// Decoder blocks indexed by level, applied from `depth - 1` down to 0.
    decoders: Vec<UpBlock<T>>,
    head: ConvParams<T>,
    head_grad_w: Vec<T>,
    head_grad_b: Vec<T>,
    cache_pool_argmax: Vec<Vec<u8>>,
    cache_pool_in_len: Vec<usize>,
    cache_head_input: Option<Tensor3<T>>,
    cache_probs: Option<Tensor3<T>>,
}

impl<T: Real> UNet<T> {
    /// Fresh network with He-uniform conv weights, zero biases and identity
    /// batch norm, drawn deterministically from `seed`.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel_size;

        let mut encoders = Vec::with_capacity(config.depth);
        let mut in_ch = config.in_channels;
        for level in 0..config.depth {
            let out_ch = config.filters(level);
            encoders.push(DoubleConv::new(in_ch, out_ch, k, &mut rng));
            in_ch = out_ch;
        }
        let bottleneck = DoubleConv::new(in_ch, config.filters(config.depth), k, &mut rng);

        let mut decoders = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let out_ch = config.filters(level);
            let up_in = config.filters(level + 1);
            decoders.push(UpBlock {
                reduce: ConvBn::new(up_in, out_ch, k, &mut rng),
                fuse: DoubleConv::new(2 * out_ch, out_ch, k, &mut rng),
            });
        }

        let mut head = ConvParams::zeros(1, config.base_filters, 1);
        he_uniform(&mut head.weights, config.base_filters, &mut rng);

        Ok(UNet {
            config,
            train_mode: false,
            encoders,
            bottleneck,
            decoders,
            head,
            head_grad_w: Vec::new(),
            head_grad_b: Vec::new(),
            cache_pool_argmax: Vec::new(),
            cache_pool_in_len: Vec::new(),
            cache_head_input: None,
            cache_probs: None,
        })
    }

    pub fn set_train(&mut self, on: bool) {
        self.train_mode = on;
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} channels, got {}",
                self.config.in_channels, x.channels
            )));
        }
        if x.len % (1 << self.config.depth) != 0 {
            return Err(Error::Shape(format!(
                "input length {} not divisible by 2^{}",
                x.len, self.config.depth
            )));
        }
        x.ensure_finite("network input")
    }

    /// Inference on an immutable model via the running statistics.
    pub fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &self.encoders {
            let a = enc.forward_infer(&h)?;
            let (pooled, _) = maxpool2_forward(&a)?;
            skips.push(a);
            h = pooled;
        }
        h = self.bottleneck.forward_infer(&h)?;
        for level in (0..self.config.depth).rev() {
            let block = &self.decoders[level];
            let up = upsample2_forward(&h);
            let reduced = block.reduce.forward_infer(&up)?;
            let cat = reduced.concat_channels(&skips[level])?;
            h = block.fuse.forward_infer(&cat)?;
        }
        let logits = conv1d_forward(&h, &self.head)?;
        let probs = sigmoid(&logits);
        probs.ensure_finite("network output")?;
        Ok(probs)
    }

    /// Training-mode forward: batch statistics, caches kept for backward.
    pub fn forward_train(&mut self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        self.cache_pool_argmax.clear();
        self.cache_pool_in_len.clear();
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &mut self.encoders {
            let a = enc.forward_train(&h)?;
            self.cache_pool_in_len.push(a.len);
            let (pooled, argmax) = maxpool2_forward(&a)?;
            self.cache_pool_argmax.push(argmax);
            skips.push(a);
            h = pooled;
        }
        h = self.bottleneck.forward_train(&h)?;
        for level in (0..self.config.depth).rev() {
            let block = &mut self.decoders[level];
            let up = upsample2_forward(&h);
            let reduced = block.reduce.forward_train(&up)?;
            let cat = reduced.concat_channels(&skips[level])?;
            h = block.fuse.forward_train(&cat)?;
        }
        self.cache_head_input = Some(h.clone());
        let logits = conv1d_forward(&h, &self.head)?;
        let probs = sigmoid(&logits);
        probs.ensure_finite("network output")?;
        self.cache_probs = Some(probs.clone());
        Ok(probs)
    }

    /// Backward from the loss gradient w.r.t. the output probabilities.
    /// Fills every layer's gradient buffers and returns nothing; call
    /// [`UNet::take_grads`] to collect them.
    pub fn backward(&mut self, grad_probs: &Tensor3<T>) -> Result<()> {
        let probs = self
            .cache_probs
            .take()
            .ok_or_else(|| Error::Training("backward before forward".into()))?;
        let head_input = self.cache_head_input.take().unwrap();

        let grad_logits = sigmoid_backward(&probs, grad_probs);
        let (mut grad_h, head_gw, head_gb) =
            conv1d_backward(&head_input, &self.head, &grad_logits)?;
        self.head_grad_w = head_gw;
        self.head_grad_b = head_gb;

        let mut skip_grads: Vec<Option<Tensor3<T>>> = vec![None; self.config.depth];
        for level in 0..self.config.depth {
            let block = &mut self.decoders[level];
            let grad_cat = block.fuse.backward(&grad_h)?;
            let (grad_reduced, grad_skip) = grad_cat.split_channels(self.config.filters(level))?;
            skip_grads[level] = Some(grad_skip);
            let grad_up = block.reduce.backward(&grad_reduced)?;
            grad_h = upsample2_backward(&grad_up)?;
        }

        grad_h = self.bottleneck.backward(&grad_h)?;

        for level in (0..self.config.depth).rev() {
            let in_len = self.cache_pool_in_len[level];
            let argmax = &self.cache_pool_argmax[level];
            let mut grad_a = maxpool2_backward(&grad_h, argmax, in_len);
            let skip = skip_grads[level].take().unwrap();
            for (g, s) in grad_a.data.iter_mut().zip(&skip.data) {
                *g += *s;
            }
            grad_h = self.encoders[level].backward(&grad_a)?;
        }
        Ok(())
    }

    /// Mutable references to every trainable block in canonical order:
    /// encoders shallow-to-deep, bottleneck, decoders deep-to-shallow
    /// (application order), head; within a conv-bn unit
    /// `[weights, bias, gain, shift]`.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for enc in &mut self.encoders {
            enc.a.collect_params(&mut out);
            enc.b.collect_params(&mut out);
        }
        self.bottleneck.a.collect_params(&mut out);
        self.bottleneck.b.collect_params(&mut out);
        for dec in self.decoders.iter_mut().rev() {
            dec.reduce.collect_params(&mut out);
            dec.fuse.a.collect_params(&mut out);
            dec.fuse.b.collect_params(&mut out);
        }
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        out
    }

    /// Shared-reference version of [`UNet::param_blocks_mut`], same order.
    pub fn param_blocks(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for enc in &self.encoders {
            enc.a.collect_param_refs(&mut out);
            enc.b.collect_param_refs(&mut out);
        }
        self.bottleneck.a.collect_param_refs(&mut out);
        self.bottleneck.b.collect_param_refs(&mut out);
        for level in (0..self.decoders.len()).rev() {
            let dec = &self.decoders[level];
            dec.reduce.collect_param_refs(&mut out);
            dec.fuse.a.collect_param_refs(&mut out);
            dec.fuse.b.collect_param_refs(&mut out);
        }
        out.push(&self.head.weights);
        out.push(&self.head.bias);
        out
    }

    /// Batch-norm running statistics in canonical order
    /// (`[running_mean, running_var]` per conv-bn unit).
    pub fn stat_blocks_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for enc in &mut self.encoders {
            enc.a.collect_stats(&mut out);
            enc.b.collect_stats(&mut out);
        }
        self.bottleneck.a.collect_stats(&mut out);
        self.bottleneck.b.collect_stats(&mut out);
        for dec in self.decoders.iter_mut().rev() {
            dec.reduce.collect_stats(&mut out);
            dec.fuse.a.collect_stats(&mut out);
            dec.fuse.b.collect_stats(&mut out);
        }
        out
    }

    pub fn stat_blocks(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for enc in &self.encoders {
            enc.a.collect_stat_refs(&mut out);
            enc.b.collect_stat_refs(&mut out);
        }
        self.bottleneck.a.collect_stat_refs(&mut out);
        self.bottleneck.b.collect_stat_refs(&mut out);
        for level in (0..self.decoders.len()).rev() {
            let dec = &self.decoders[level];
            dec.reduce.collect_stat_refs(&mut out);
            dec.fuse.a.collect_stat_refs(&mut out);
            dec.fuse.b.collect_stat_refs(&mut out);
        }
        out
    }

    /// Move the gradients computed by the last [`UNet::backward`] out of the
    /// layers, in canonical parameter order.
    pub fn take_grads(&mut self) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::new();
        for enc in &mut self.encoders {
            enc.a.take_grads(&mut out);
            enc.b.take_grads(&mut out);
        }
        self.bottleneck.a.take_grads(&mut out);
        self.bottleneck.b.take_grads(&mut out);
        for level in (0..self.decoders.len()).rev() {
            let dec = &mut self.decoders[level];
            dec.reduce.take_grads(&mut out);
            dec.fuse.a.take_grads(&mut out);
            dec.fuse.b.take_grads(&mut out);
        }
        out.push(std::mem::take(&mut self.head_grad_w));
        out.push(std::mem::take(&mut self.head_grad_b));
        if out.iter().any(|g| g.is_empty()) {
            return Err(Error::Training(
                "gradients missing; run backward before collecting".into(),
            ));
        }
        Ok(out)
    }

    /// Clone of all parameters and running statistics, for early-stopping
    /// snapshots.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.param_blocks()
            .into_iter()
            .chain(self.stat_blocks())
            .cloned()
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) -> Result<()> {
        let n_params = self.param_blocks().len();
        if snapshot.len() != n_params + self.stat_blocks().len() {
            return Err(Error::Shape("snapshot block count mismatch".into()));
        }
        let copy = |dst: Vec<&mut Vec<T>>, src: &[Vec<T>]| -> Result<()> {
            for (d, s) in dst.into_iter().zip(src) {
                if d.len() != s.len() {
                    return Err(Error::Shape("snapshot block length mismatch".into()));
                }
                d.copy_from_slice(s);
            }
            Ok(())
        };
        copy(self.param_blocks_mut(), &snapshot[..n_params])?;
        copy(self.stat_blocks_mut(), &snapshot[n_params..])
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_filters: 4,
            kernel_size: 3,
            in_channels: 1,
            input_length: 32,
        }
    }

    #[test]
    fn output_shape_and_range() {
        let mut net = UNet::<f32>::new(tiny_config(), 1).unwrap();
        let x = Tensor3::from_fn(3, 1, 32, |b, _, l| ((b + l) as f32 * 0.37).sin());
        let probs = net.forward_train(&x).unwrap();
        assert_eq!((probs.batch, probs.channels, probs.len), (3, 1, 32));
        assert!(probs.data.iter().all(|&p| p > 0.0 && p < 1.0));
        let infer = net.forward(&x).unwrap();
        assert_eq!((infer.batch, infer.channels, infer.len), (3, 1, 32));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = UNet::<f32>::new(tiny_config(), 7).unwrap();
        let x = Tensor3::from_fn(2, 1, 32, |b, _, l| ((b * 31 + l) as f32 * 0.11).cos());
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let net = UNet::<f32>::new(tiny_config(), 1).unwrap();
        let x = Tensor3::<f32>::zeros(1, 2, 32);
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn indivisible_length_rejected() {
        let net = UNet::<f32>::new(tiny_config(), 1).unwrap();
        let x = Tensor3::<f32>::zeros(1, 1, 30);
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn default_config_is_valid_and_320_divides() {
        let cfg = UNetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.input_length % (1 << cfg.depth), 0);
        assert_eq!(cfg.filters(0), 16);
        assert_eq!(cfg.filters(4), 256);
    }

    #[test]
    fn skip_concat_doubles_decoder_channels() {
        // Structural law: the fuse block at level d consumes 2 * filters(d).
        let net = UNet::<f32>::new(UNetConfig::default(), 3).unwrap();
        for (level, dec) in net.decoders.iter().enumerate() {
            assert_eq!(dec.fuse.a.conv.in_ch, 2 * net.config.filters(level));
            assert_eq!(dec.fuse.a.conv.out_ch, net.config.filters(level));
            assert_eq!(dec.reduce.conv.in_ch, net.config.filters(level + 1));
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = UNet::<f32>::new(tiny_config(), 42).unwrap();
        let b = UNet::<f32>::new(tiny_config(), 42).unwrap();
        for (x, y) in a.param_blocks().iter().zip(b.param_blocks().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut net = UNet::<f32>::new(tiny_config(), 5).unwrap();
        let snap = net.snapshot();
        let x = Tensor3::from_fn(2, 1, 32, |_, _, l| (l as f32 * 0.2).sin());
        let before = net.forward(&x).unwrap();
        // Perturb, then restore.
        for block in net.param_blocks_mut() {
            for w in block.iter_mut() {
                *w += 0.05;
            }
        }
        let perturbed = net.forward(&x).unwrap();
        assert_ne!(before.data, perturbed.data);
        net.restore(&snap).unwrap();
        let after = net.forward(&x).unwrap();
        assert_eq!(before.data, after.data);
    }
}
