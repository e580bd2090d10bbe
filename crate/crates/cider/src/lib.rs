//! Zero-shot non-blind image deconvolution.
//!
//! Given a blurred image and its point-spread function, the engine restores a
//! sharp image in three stages: a multi-filter feature stack is extracted
//! from the input, Richardson-Lucy deconvolution runs on every feature
//! channel, and a compact encoder-decoder generator is optimized against an
//! SSIM + Hessian (+ optional sparsity) objective to synthesize the final
//! image. No training data is involved; the only inputs are the degraded
//! image and the kernel.
//!
//! Entry points:
//! - [`pipeline::restore`] — the full restoration loop.
//! - [`rl::rl_image`] — the classic image-space Richardson-Lucy baseline.
//! - [`wavelet::remove_background`] — microscopy background subtraction.
//! - [`pipeline::benchmark`] — batch evaluation over an image/kernel grid.
//!
//! The `examples/` directory has one runnable program per capability; the
//! `cider` binary exposes the same operations as subcommands.

pub mod autodiff;
pub mod error;
pub mod features;
pub mod generator;
pub mod imageio;
pub mod instrument;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod reference;
pub mod rl;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod wavelet;
pub mod weights;

pub mod cli;

pub use error::{CiderError, Result};
pub use tensor::{BoundaryMode, Image, Kernel, Tensor};
