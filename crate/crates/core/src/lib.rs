//! ECG-free systolic-complex detection in seismocardiogram traces.
//!
//! The crate covers the full pipeline: record ingestion and windowing
//! ([`signal`], [`io`]), ECG-referenced ground-truth labeling ([`annotate`]),
//! a from-scratch differentiable 1D U-Net ([`neural`]), threshold-based
//! detection and scoring ([`detect`]), and the experiment grid with a
//! synthetic data generator ([`experiment`]).
//!
//! Heavy kernels fan out over rayon when the default `parallel` feature is
//! enabled; results are bit-identical to the sequential fallback because
//! parallelism only spans independent output elements.

pub mod annotate;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod io;
pub mod neural;
pub mod parallel;
pub mod record;
pub mod signal;

pub use error::{Error, Result};
pub use record::{ChannelSelection, Record};
pub use signal::{Window, WindowConfig};
