//! Pixel-wise ensemble fusion of image denoisers.
//!
//! A pool of denoisers is applied to a noisy image, a scoring network rates
//! every (noisy, denoised) pair per pixel, and the softmax of the score maps
//! yields convex per-pixel weighting maps that blend the pool results into a
//! single output. The scoring network additionally predicts a per-pixel
//! log-variance used by the training loss to model weighting uncertainty.
//!
//! Modules:
//! - [`image`]: raster data model, float container I/O, PSNR/SSIM.
//! - [`noise`]: AWGN, signal-dependent and spatially composite noise synthesis.
//! - [`corpus`]: procedural clean-image generator for self-contained runs.
//! - [`nn`]: minimal f64 CPU tensor/conv stack with exact backprop.
//! - [`pool`]: the denoiser pool (classic filters, trainable CNNs, external results).
//! - [`scorer`]: the dual-head U-Net scoring network.
//! - [`fusion`]: softmax weighting, weighted fusion, oracle weights.
//! - [`train`]: losses, schedules, scorer training, distillation, gradcheck.

pub mod corpus;
pub mod fusion;
pub mod image;
pub mod nn;
pub mod noise;
pub mod pool;
pub mod scorer;
pub mod train;

mod error;

pub use error::{Error, Result};
