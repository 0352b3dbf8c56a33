//! Super-resolution: interpolation baselines and a tiny trainable network.

mod interp;
mod tiny;

pub use interp::{upscale_bicubic, upscale_nearest};
pub use tiny::{
    load_tiny_sr, save_tiny_sr, train_tiny_sr, train_tiny_sr_images, SrEpochLog, SrTrainConfig,
    SrTrainOutcome, TinySr, TinySrMeta, TINY_SR_FORMAT,
};

use crate::error::{Error, Result};
use crate::image::Image;

/// A super-resolution method at a fixed scale.
#[derive(Debug, Clone)]
pub enum SrMethod {
    Nearest { scale: usize },
    Bicubic { scale: usize },
    Tiny(Box<TinySr>),
}

impl SrMethod {
    /// Row label used in benchmark reports.
    pub fn name(&self) -> String {
        match self {
            SrMethod::Nearest { .. } => "nearest".into(),
            SrMethod::Bicubic { .. } => "bicubic".into(),
            SrMethod::Tiny(t) => t.name(),
        }
    }

    pub fn scale(&self) -> usize {
        match self {
            SrMethod::Nearest { scale } | SrMethod::Bicubic { scale } => *scale,
            SrMethod::Tiny(t) => t.scale(),
        }
    }
}

/// Upscales `img` by the method's scale.
pub fn apply_sr(method: &SrMethod, img: &Image) -> Result<Image> {
    match method {
        SrMethod::Nearest { scale } => upscale_nearest(img, *scale),
        SrMethod::Bicubic { scale } => upscale_bicubic(img, *scale),
        SrMethod::Tiny(t) => t.apply(img),
    }
}

pub(crate) fn check_scale(scale: usize) -> Result<()> {
    if !(2..=4).contains(&scale) {
        return Err(Error::Param(format!("scale {scale} (expected 2, 3 or 4)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::downsample;
    use crate::metrics::rmse;

    #[test]
    fn dispatch_and_shapes() {
        let img = crate::synth::textured_image(13, 9, 1);
        for s in 2..=4 {
            let n = apply_sr(&SrMethod::Nearest { scale: s }, &img).unwrap();
            assert_eq!(n, upscale_nearest(&img, s).unwrap());
            let b = apply_sr(&SrMethod::Bicubic { scale: s }, &img).unwrap();
            assert_eq!((b.width(), b.height()), (13 * s, 9 * s));
        }
        assert!(apply_sr(&SrMethod::Bicubic { scale: 5 }, &img).is_err());
    }

    #[test]
    fn interpolators_are_cycle_consistent_on_smooth_images() {
        let img = Image::from_fn(48, 48, 255.0, |x, y| {
            128.0 + 60.0 * ((x as f64) * 0.11).sin() * ((y as f64) * 0.07).cos()
        })
        .unwrap();
        for s in 2..=4 {
            for m in [SrMethod::Nearest { scale: s }, SrMethod::Bicubic { scale: s }] {
                let back = downsample(&apply_sr(&m, &img).unwrap(), s).unwrap();
                let e = rmse(&back, &img).unwrap() / img.mean();
                assert!(e < 0.02, "{} x{s}: {e}", m.name());
            }
        }
    }
}
