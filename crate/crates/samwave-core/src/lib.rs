//! Wavelet-domain high-frequency feature extraction and adapter-based tuning of a
//! frozen toy transformer encoder, with the Fourier fixed-mask comparison harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`autodiff`] / [`complex`]: a dense f64 tensor type with
//!   tape-based reverse-mode differentiation; complex values are (re, im) pairs
//!   of real tensors so all gradients stay real.
//! - [`wavelets`]: real orthogonal filter banks (haar/db2/coif2/sym4) and the
//!   single-level 2-D DWT/IWT built from stride-2 kernels.
//! - [`dtcwt`]: the level-1 dual-tree complex wavelet transform producing six
//!   oriented complex subbands.
//! - [`freqfeat`]: the resize -> decompose -> combine-details extraction pipeline
//!   plus the fixed-mask Fourier high/low-pass baseline.
//! - [`adapters`], [`model`], [`train`]: embedding/WHF tune projections, per-layer
//!   real or complex adapters, the frozen encoder + trainable decoder, and the
//!   pretraining/adaptation loops.
//! - [`objectives`]: losses (bce, balanced bce, soft IoU) and evaluation metrics.
//! - [`synthdata`]: deterministic synthetic segmentation tasks and PNG dataset I/O.
//! - [`analysis`]: the controlled-comparison harnesses (extractor A/B deltas,
//!   subband ablation).

pub mod adapters;
pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod complex;
pub mod dtcwt;
pub mod error;
pub mod freqfeat;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod train;
pub mod wavelets;
pub mod wvt1;

pub use autodiff::{grad_check, Gradients, Tape, Var};
pub use complex::{ComplexTensor, ComplexVar};
pub use error::{Error, Result};
pub use tensor::{DType, Param, Tensor};
