//! From-scratch differentiable 1-D U-Net: tensor kernels, forward/backward
//! passes, BCE loss, Adam, checkpointing.
//!
//! Everything is generic over [`Real`]: `f32` for training and inference,
//! `f64` for the finite-difference gradient checks.

pub mod activations;
pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod init;
pub mod loss;
pub mod pool;
pub mod tensor;
pub mod unet;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::bce_loss;
pub use tensor::{Real, Tensor3};
pub use unet::{UNet, UNetConfig};

use crate::error::Result;

/// One optimizer step: collect the gradients left by `backward`, apply Adam.
pub fn adam_step<T: Real>(model: &mut UNet<T>, state: &mut AdamState<T>) -> Result<()> {
    let grads = model.take_grads()?;
    let grad_slices: Vec<&[T]> = grads.iter().map(|g| g.as_slice()).collect();
    let mut params = model.param_blocks_mut();
    let mut param_slices: Vec<&mut [T]> = params.iter_mut().map(|p| p.as_mut_slice()).collect();
    state.step(&mut param_slices, &grad_slices)
}
