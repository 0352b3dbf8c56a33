use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use super::ModifierKind;
use crate::error::{Error, Result};
use crate::image::filter::{full_radius, gaussian_blur};
use crate::image::{resize_bilinear, Image};
use crate::rng;

/// The blur modifier uses a fixed 7x7 kernel.
pub const BLUR_KERNEL_RADIUS: usize = 3;

/// Width of the Gaussian used by the sharpness modifier's unsharp mask.
pub const SHARPNESS_SIGMA: f64 = 1.0;

/// Quality of the undistorted source, used by modifiers that degrade relative to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseQuality {
    /// Source GSD in cm/px when the image carries no tag.
    pub gsd_cm: f64,
    pub rer: f64,
    /// Source SNR; `None` treats the source as noiseless.
    pub snr: Option<f64>,
}

impl Default for BaseQuality {
    fn default() -> Self {
        BaseQuality {
            gsd_cm: 30.0,
            rer: 0.55,
            snr: None,
        }
    }
}

/// 7x7 Gaussian blur with standard deviation `sigma`, reflecting at borders.
pub fn apply_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Param(format!("blur sigma {sigma} must be > 0")));
    }
    gaussian_blur(img, sigma, BLUR_KERNEL_RADIUS)
}

/// Unsharp masking for `factor > 1`, a blend toward the blurred image below 1.
pub fn apply_sharpness(img: &Image, factor: f64) -> Result<Image> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Param(format!("sharpness factor {factor} must be > 0")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, SHARPNESS_SIGMA, BLUR_KERNEL_RADIUS)?;
    let data = img
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&x, &b)| {
            if factor > 1.0 {
                x + (factor - 1.0) * (x - b)
            } else {
                factor * x + (1.0 - factor) * b
            }
        })
        .collect();
    img.with_data(data)
}

/// Bilinear upsampling by `target / base`, tagging the result with `target` cm/px.
pub fn apply_gsd(img: &Image, target_gsd: f64, base_gsd: f64) -> Result<Image> {
    if !(base_gsd.is_finite() && base_gsd > 0.0) || !target_gsd.is_finite() {
        return Err(Error::Param(format!("gsd target {target_gsd}, base {base_gsd}")));
    }
    if target_gsd < base_gsd {
        return Err(Error::Param(format!(
            "target gsd {target_gsd} finer than base {base_gsd}; only degradation is modelled"
        )));
    }
    let mut out = resize_bilinear(img, target_gsd / base_gsd)?;
    out.gsd = Some(target_gsd);
    Ok(out)
}

/// Gaussian sigma whose edge response gives `target_rer`: `erf(1 / (2 sqrt(2) sigma)) = rer`.
pub fn rer_to_sigma(target_rer: f64) -> Result<f64> {
    if !(target_rer > 0.0 && target_rer < 1.0) {
        return Err(Error::Param(format!("rer {target_rer} outside (0, 1)")));
    }
    Ok(1.0 / (2.0 * std::f64::consts::SQRT_2 * erf_inv(target_rer)))
}

/// Blurs so an edge of response `base_rer` drops to `target_rer`.
///
/// Gaussian variances add, so the extra blur is `sqrt(sigma_t^2 - sigma_b^2)`.
pub fn apply_rer(img: &Image, target_rer: f64, base_rer: f64) -> Result<Image> {
    let st = rer_to_sigma(target_rer)?;
    let sb = rer_to_sigma(base_rer)?;
    if target_rer > base_rer {
        return Err(Error::Param(format!(
            "target rer {target_rer} above base {base_rer}; blur can only lower it"
        )));
    }
    let extra = (st * st - sb * sb).max(0.0).sqrt();
    if extra < 1e-6 {
        return Ok(img.clone());
    }
    gaussian_blur(img, extra, full_radius(extra))
}

/// Adds seeded zero-mean Gaussian noise with std `mean(img) / target_snr`.
pub fn apply_snr(img: &Image, target_snr: f64, seed: u64) -> Result<Image> {
    if !(target_snr > 0.0) || target_snr.is_nan() {
        return Err(Error::Param(format!("snr {target_snr} must be > 0")));
    }
    let mean = img.mean();
    if mean <= 0.0 {
        return Err(Error::DegenerateInput("all-zero image has no signal".into()));
    }
    let std = mean / target_snr;
    if std == 0.0 || !std.is_finite() {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Param(e.to_string()))?;
    let mut r = rng::stream(seed, &[0x5e1]);
    let data = img
        .data()
        .iter()
        .map(|v| v + normal.sample(&mut r))
        .collect();
    img.with_data(data)
}

/// Applies `kind` at grid value `value` (GSD in m/px) relative to `base`.
pub fn apply_modifier(
    img: &Image,
    kind: ModifierKind,
    value: f64,
    base: &BaseQuality,
    seed: u64,
) -> Result<Image> {
    match kind {
        ModifierKind::Blur => apply_blur(img, value),
        ModifierKind::Sharpness => apply_sharpness(img, value),
        ModifierKind::Gsd => apply_gsd(img, value * 100.0, img.gsd.unwrap_or(base.gsd_cm)),
        ModifierKind::Rer => apply_rer(img, value, base.rer),
        ModifierKind::Snr => match base.snr {
            Some(b) if b.is_finite() => {
                if value > b {
                    return Err(Error::Param(format!("target snr {value} above base {b}")));
                }
                let inv = (1.0 / (value * value) - 1.0 / (b * b)).max(0.0);
                if inv == 0.0 {
                    return Ok(img.clone());
                }
                apply_snr(img, 1.0 / inv.sqrt(), seed)
            }
            _ => apply_snr(img, value, seed),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::filter::gaussian_kernel;
    use crate::synth::textured_image;

    fn max_abs_diff(a: &Image, b: &Image) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn blur_constant_and_delta_limit() {
        let c = Image::filled(20, 20, 3, 90.0, 255.0).unwrap();
        assert!(max_abs_diff(&apply_blur(&c, 2.2).unwrap(), &c) < 1e-12);
        let t = textured_image(40, 40, 3);
        assert!(max_abs_diff(&apply_blur(&t, 0.01).unwrap(), &t) < 1e-3);
        assert!(apply_blur(&t, 0.0).is_err());
        assert!(apply_blur(&t, -1.0).is_err());
    }

    #[test]
    fn blur_impulse_response_is_the_kernel() {
        let n = 15;
        let mut data = vec![0.0; n * n];
        data[7 * n + 7] = 1.0;
        let img = Image::new(n, n, 1, data, 1.0).unwrap();
        let out = apply_blur(&img, 1.0).unwrap();
        // oracle: outer product of a directly evaluated, normalised 7-tap Gaussian
        let taps: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
        let s: f64 = taps.iter().sum();
        for dy in 0..7 {
            for dx in 0..7 {
                let expect = taps[dx] * taps[dy] / (s * s);
                assert!((out.get(4 + dx, 4 + dy, 0) - expect).abs() < 1e-15);
            }
        }
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(gaussian_kernel(1.0, 3).len(), 7);
    }

    #[test]
    fn sharpness_identity_constant_and_overshoot() {
        let t = textured_image(32, 32, 4);
        assert_eq!(apply_sharpness(&t, 1.0).unwrap(), t);
        let c = Image::filled(16, 16, 1, 77.0, 255.0).unwrap();
        assert!(max_abs_diff(&apply_sharpness(&c, 3.0).unwrap(), &c) < 1e-12);
        assert!(max_abs_diff(&apply_sharpness(&c, 0.4).unwrap(), &c) < 1e-12);
        assert!(apply_sharpness(&t, 0.0).is_err());

        // step edge 60 | 180, unsharp oracle evaluated independently per column
        let step = Image::from_fn(24, 8, 255.0, |x, _| if x < 12 { 60.0 } else { 180.0 }).unwrap();
        let out = apply_sharpness(&step, 2.0).unwrap();
        let k: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
        let ks: f64 = k.iter().sum();
        for x in 4..20 {
            let mut blur = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = x as i32 + j as i32 - 3;
                blur += kv / ks * if sx < 12 { 60.0 } else { 180.0 };
            }
            let v = step.get(x, 4, 0);
            let expect = (v + (v - blur)).clamp(0.0, 255.0);
            assert!((out.get(x, 4, 0) - expect).abs() < 1e-9, "x={x}");
        }
        assert!(out.get(11, 4, 0) < 60.0 && out.get(12, 4, 0) > 180.0);
    }

    #[test]
    fn sharpness_below_one_blurs() {
        let t = textured_image(32, 32, 8);
        let soft = apply_sharpness(&t, 0.3).unwrap();
        let sharp = apply_sharpness(&t, 3.0).unwrap();
        let grad = |im: &Image| -> f64 {
            let mut s = 0.0;
            for y in 0..32 {
                for x in 1..32 {
                    s += (im.get(x, y, 0) - im.get(x - 1, y, 0)).abs();
                }
            }
            s
        };
        assert!(grad(&soft) < grad(&t) && grad(&t) < grad(&sharp));
    }

    #[test]
    fn gsd_shapes() {
        let t = textured_image(100, 100, 1);
        let same = apply_gsd(&t, 30.0, 30.0).unwrap();
        assert_eq!(same.data(), t.data());
        assert_eq!(same.gsd, Some(30.0));
        let g = apply_gsd(&t, 45.0, 30.0).unwrap();
        assert_eq!((g.width(), g.height(), g.gsd), (150, 150, Some(45.0)));
        assert!(apply_gsd(&t, 20.0, 30.0).is_err());
    }

    #[test]
    fn gsd_doubling_on_large_raster() {
        let img = Image::filled(5000, 5000, 1, 10.0, 255.0).unwrap();
        let g = apply_gsd(&img, 60.0, 30.0).unwrap();
        assert_eq!((g.width(), g.height(), g.gsd), (10000, 10000, Some(60.0)));
    }

    // Independent inversion of the Gaussian edge model by bisection on erf.
    fn sigma_by_bisection(rer: f64) -> f64 {
        let model = |s: f64| statrs::function::erf::erf(1.0 / (2.0 * std::f64::consts::SQRT_2 * s));
        let (mut lo, mut hi) = (1e-6, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if model(mid) > rer {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn rer_sigma_matches_bisection() {
        for rer in [0.15, 0.25, 0.35, 0.45, 0.55, 0.9] {
            let s = rer_to_sigma(rer).unwrap();
            let oracle = sigma_by_bisection(rer);
            assert!((s - oracle).abs() < 1e-9 * oracle.max(1.0), "rer {rer}: {s} vs {oracle}");
        }
        // frozen from the bisection oracle
        assert!((rer_to_sigma(0.15).unwrap() - 2.643_846).abs() < 1e-5);
        assert!((rer_to_sigma(0.55).unwrap() - 0.661_888).abs() < 1e-5);
        assert!(rer_to_sigma(0.15).unwrap() > rer_to_sigma(0.55).unwrap());
        assert!(rer_to_sigma(1.0 - 1e-12).unwrap() < 0.08);
        assert!(rer_to_sigma(0.0).is_err() && rer_to_sigma(1.0).is_err());
    }

    #[test]
    fn rer_identity_constant_and_guard() {
        let t = textured_image(24, 24, 2);
        assert_eq!(apply_rer(&t, 0.55, 0.55).unwrap(), t);
        let c = Image::filled(16, 16, 1, 33.0, 255.0).unwrap();
        assert!(max_abs_diff(&apply_rer(&c, 0.2, 0.55).unwrap(), &c) < 1e-12);
        assert!(apply_rer(&t, 0.6, 0.55).is_err());
    }

    #[test]
    fn snr_noise_statistics() {
        let img = Image::filled(512, 512, 1, 128.0, 255.0).unwrap();
        let out = apply_snr(&img, 15.0, 42).unwrap();
        let diffs: Vec<f64> = out.data().iter().map(|v| v - 128.0).collect();
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        let expect = 128.0 / 15.0;
        assert!((sd - expect).abs() / expect < 0.03, "sd {sd}");
        assert_eq!(out, apply_snr(&img, 15.0, 42).unwrap());
        assert_ne!(out, apply_snr(&img, 15.0, 43).unwrap());
        let quiet = apply_snr(&img, 1e9, 1).unwrap();
        assert!(max_abs_diff(&quiet, &img) < 1.0);
        let zero = Image::filled(8, 8, 1, 0.0, 255.0).unwrap();
        assert!(matches!(apply_snr(&zero, 10.0, 0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn neutral_parameters_leave_images_unchanged() {
        let t = textured_image(48, 48, 12);
        let base = BaseQuality::default();
        let cases = [
            (ModifierKind::Blur, 0.01),
            (ModifierKind::Sharpness, 1.0),
            (ModifierKind::Gsd, 0.30),
            (ModifierKind::Rer, 0.55),
            (ModifierKind::Snr, 1e12),
        ];
        for (kind, v) in cases {
            let out = apply_modifier(&t, kind, v, &base, 3).unwrap();
            assert!(max_abs_diff(&out, &t) < 1.0, "{kind}");
        }
    }

    #[test]
    fn constant_images_stay_constant() {
        let c = Image::filled(40, 40, 1, 120.0, 255.0).unwrap();
        let base = BaseQuality::default();
        for (kind, v) in [
            (ModifierKind::Blur, 2.0),
            (ModifierKind::Sharpness, 6.0),
            (ModifierKind::Gsd, 0.5),
            (ModifierKind::Rer, 0.2),
        ] {
            let out = apply_modifier(&c, kind, v, &base, 0).unwrap();
            assert!(out.data().iter().all(|s| (s - 120.0).abs() < 1e-9), "{kind}");
        }
    }

    #[test]
    fn snr_respects_base_noise() {
        let c = Image::filled(256, 256, 1, 100.0, 255.0).unwrap();
        let base = BaseQuality {
            snr: Some(40.0),
            ..Default::default()
        };
        let out = apply_modifier(&c, ModifierKind::Snr, 20.0, &base, 9).unwrap();
        let sd = (out.data().iter().map(|v| (v - 100.0).powi(2)).sum::<f64>()
            / out.data().len() as f64)
            .sqrt();
        // added noise std = 100 * sqrt(1/20^2 - 1/40^2)
        let expect = 100.0 * (1.0f64 / 400.0 - 1.0 / 1600.0).sqrt();
        assert!((sd - expect).abs() / expect < 0.03);
        assert!(apply_modifier(&c, ModifierKind::Snr, 50.0, &base, 9).is_err());
    }
}
