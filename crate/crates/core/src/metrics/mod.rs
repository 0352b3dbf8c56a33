//! Image quality measurements.
//!
//! [`fr`] compares an image against a reference; [`nr`] inspects a single
//! image (edge response and noise).

pub mod fr;
pub mod nr;

pub use fr::{fr_report, gmsd, psnr, rmse, ssim, FrReport, PSNR_CAP};
pub use nr::{
    estimate_snr, lsf_fwhm, measure_edge_response, measure_nr, mtf_at_nyquist, rer, EdgeProfile,
    NrReport, Orientation, SnrEstimate,
};
