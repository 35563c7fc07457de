//! Convolutional sparse coding with partial side-information guidance, in
//! both classical (ISTA) and unrolled (learned) form, for pansharpening.
//!
//! The crate is `no_std` with `alloc`. File formats, the command line and
//! any other IO live in the `scsc-cli` crate.
//!
//! Layout:
//! - [`tensor`]: dense arrays and filter banks.
//! - [`conv`]: same-padded cross-correlation and its adjoint.
//! - [`resample`]: bicubic upsampling and Gaussian blur + decimation.
//! - [`prox`]: soft and piecewise soft thresholding with their VJPs.
//! - [`solver`]: ISTA for the plain, unique and common sub-problems, plus
//!   the alternating scheme for the joint problem.
//! - [`network`]: the unrolled SIEM / UIEM / CIEM network.
//! - [`backprop`]: reverse-mode gradients through the unrolled graph.
//! - [`train`]: l1 loss, Adam and the training loop.
//! - [`data`]: Wald-protocol degradation and synthetic sample generation.
//! - [`metrics`]: PSNR, SSIM, SAM and ERGAS.
//! - [`gradcheck`]: finite-difference verification of [`backprop`].
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backprop;
pub mod conv;
pub mod data;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod prox;
pub mod resample;
pub mod solver;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{ModelConfig, ScscPnnModel};
pub use prox::ThresholdVector;
pub use tensor::{FilterBank, Tensor};
