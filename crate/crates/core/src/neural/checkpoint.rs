//! Model + optimizer checkpointing.
//!
//! Layout (all little-endian): magic `SCGU`, `u32` version, the five `u32`
//! architecture fields, `u64` trainable-value count, trainable parameters as
//! `f32` in canonical block order, `u64` running-stat count, running stats as
//! `f32`, one optimizer flag byte, optionally the Adam state (`u64` step,
//! four `f64` hyperparameters, then `m` and `v` as `f32`), and a trailing
//! CRC32 over everything before it.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::adam::{AdamConfig, AdamState};
use super::tensor::Real;
use super::unet::{UNet, UNetConfig};

const MAGIC: &[u8; 4] = b"SCGU";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Serialize a model (and optionally its Adam state) to `path`.
pub fn save_checkpoint<T: Real>(
    model: &UNet<T>,
    optimizer: Option<&AdamState<T>>,
    path: &Path,
) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let c = model.config;
    w.u32(c.depth as u32);
    w.u32(c.base_filters as u32);
    w.u32(c.kernel_size as u32);
    w.u32(c.in_channels as u32);
    w.u32(c.input_length as u32);

    let params = model.param_blocks();
    let n_params: usize = params.iter().map(|b| b.len()).sum();
    w.u64(n_params as u64);
    for block in &params {
        for &x in block.iter() {
            w.f32(x.to_f32_());
        }
    }

    let stats = model.stat_blocks();
    let n_stats: usize = stats.iter().map(|b| b.len()).sum();
    w.u64(n_stats as u64);
    for block in &stats {
        for &x in block.iter() {
            w.f32(x.to_f32_());
        }
    }

    match optimizer {
        Some(state) => {
            w.buf.push(1);
            w.u64(state.step);
            w.f64(state.config.learning_rate);
            w.f64(state.config.beta1);
            w.f64(state.config.beta2);
            w.f64(state.config.epsilon);
            for block in &state.m {
                for &x in block.iter() {
                    w.f32(x.to_f32_());
                }
            }
            for block in &state.v {
                for &x in block.iter() {
                    w.f32(x.to_f32_());
                }
            }
        }
        None => w.buf.push(0),
    }

    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);

    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&w.buf)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Deserialize a model (and Adam state, when stored) from `path`. The
/// architecture is reconstructed entirely from the header.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(UNet<T>, Option<AdamState<T>>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 8 {
        return Err(Error::Checkpoint("file too small".into()));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Checkpoint("CRC mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let config = UNetConfig {
        depth: r.u32()? as usize,
        base_filters: r.u32()? as usize,
        kernel_size: r.u32()? as usize,
        in_channels: r.u32()? as usize,
        input_length: r.u32()? as usize,
    };
    let mut model = UNet::<T>::new(config, 0)?;

    let n_params = r.u64()? as usize;
    if n_params != model.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match architecture ({})",
            n_params,
            model.param_count()
        )));
    }
    let mut block_lens = Vec::new();
    for block in model.param_blocks_mut() {
        block_lens.push(block.len());
        for x in block.iter_mut() {
            *x = T::from_f32_(r.f32()?);
        }
    }
    let n_stats = r.u64()? as usize;
    let have_stats: usize = model.stat_blocks().iter().map(|b| b.len()).sum();
    if n_stats != have_stats {
        return Err(Error::Checkpoint("running-stat count mismatch".into()));
    }
    for block in model.stat_blocks_mut() {
        for x in block.iter_mut() {
            *x = T::from_f32_(r.f32()?);
        }
    }

    let optimizer = match r.byte()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let config = AdamConfig {
                learning_rate: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let mut state = AdamState::<T>::new(config, &block_lens);
            state.step = step;
            for block in state.m.iter_mut() {
                for x in block.iter_mut() {
                    *x = T::from_f32_(r.f32()?);
                }
            }
            for block in state.v.iter_mut() {
                for x in block.iter_mut() {
                    *x = T::from_f32_(r.f32()?);
                }
            }
            Some(state)
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "bad optimizer flag {other}"
            )))
        }
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok((model, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Tensor3;

    fn small_config(in_channels: usize) -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_filters: 4,
            kernel_size: 3,
            in_channels,
            input_length: 32,
        }
    }

    #[test]
    fn round_trip_preserves_forward_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = UNet::<f32>::new(small_config(1), 9).unwrap();
        save_checkpoint(&model, None, &path).unwrap();
        let (loaded, opt) = load_checkpoint::<f32>(&path).unwrap();
        assert!(opt.is_none());

        let x = Tensor3::from_fn(2, 1, 32, |_, _, l| (l as f32 * 0.3).sin());
        assert_eq!(model.forward(&x).unwrap().data, loaded.forward(&x).unwrap().data);
    }

    #[test]
    fn save_is_idempotent_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let model = UNet::<f32>::new(small_config(3), 11).unwrap();
        save_checkpoint(&model, None, &a).unwrap();
        save_checkpoint(&model, None, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = UNet::<f32>::new(small_config(1), 2).unwrap();
        let lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
        let mut state = AdamState::<f32>::new(AdamConfig::with_learning_rate(3e-3), &lens);
        state.step = 17;
        state.m[0][0] = 0.25;
        state.v[0][0] = 0.125;
        save_checkpoint(&model, Some(&state), &path).unwrap();
        let (_, loaded) = load_checkpoint::<f32>(&path).unwrap();
        let loaded = loaded.unwrap();
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.config, state.config);
        assert_eq!(loaded.m[0][0], 0.25);
        assert_eq!(loaded.v[0][0], 0.125);
    }

    #[test]
    fn wrong_magic_rejected_without_partial_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = UNet::<f32>::new(small_config(1), 4).unwrap();
        save_checkpoint(&model, None, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn channel_config_round_trips_for_all_modes() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1usize, 3, 3, 6] {
            let path = dir.path().join(format!("m{channels}.ckpt"));
            let model = UNet::<f32>::new(small_config(channels), 1).unwrap();
            save_checkpoint(&model, None, &path).unwrap();
            let (loaded, _) = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(loaded.config.in_channels, channels);
        }
    }
}
