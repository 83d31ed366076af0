//! Confidence-guided residual crowd counting.
//!
//! The crate implements a complete, desk-scale counting pipeline:
//!
//! 1. **Density targets** — point head annotations are rasterized into density
//!    maps whose pixel sum equals the person count ([`density`]).
//! 2. **Network** — a VGG-shaped backbone produces a coarse density map at a
//!    32× downsampled resolution, which is then refined coarse-to-fine by
//!    residual heads whose corrections are gated element-wise by learned
//!    per-pixel confidence maps ([`model`]).
//! 3. **Objective** — a per-scale density regression loss combined with a
//!    confidence-guiding log term ([`loss`]).
//! 4. **Training and evaluation** — patch-based training with Adam, bitwise
//!    reproducible checkpoints, and MAE/MSE reporting over the standard
//!    density/weather/distractor categories ([`train`], [`eval`]).
//!
//! Everything runs on a minimal reverse-mode autodiff engine ([`autodiff`])
//! that provides exactly the tensor primitives the network needs, in both
//! f32 (training) and f64 (gradient checking) precision. A deterministic
//! synthetic scene generator ([`synth`]) stands in for a real dataset so that
//! every numeric behavior is testable.

pub mod annotations;
pub mod autodiff;
pub mod density;
pub mod error;
pub mod seed;

pub use autodiff::{Graph, Param, Scalar, TensorId};
pub use error::{Error, Result};
