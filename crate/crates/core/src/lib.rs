//! Quality metric regression toolkit for Earth-observation imagery.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: planar floating-point rasters, I/O, resampling, crops and padding.
//! - [`modifiers`]: the five self-annotating distortion operators and dataset generation.
//! - [`metrics`]: full-reference (RMSE, PSNR, SSIM, GMSD) and no-reference
//!   (SNR, RER, FWHM, MTF at Nyquist) measurements.
//! - [`nn`]: a small double-precision training engine (conv3x3, pooling, linear, softmax).
//! - [`regressor`]: the interval-classification quality regressor and the quality loss.
//! - [`eval`]: retrieval metrics (medR, R@K, P/R/A/F@K, AUC), score aggregation and
//!   benchmark reports.
//! - [`sr`]: interpolation baselines and a tiny trainable super-resolution net.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise. Results never depend on the
//! number of worker threads.

pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod modifiers;
pub mod nn;
pub mod par;
pub mod regressor;
pub mod rng;
pub mod sr;
pub mod synth;

pub use error::{Error, Result};
pub use image::{CropRect, Image};
pub use modifiers::{ModifierKind, ParamGrid};
