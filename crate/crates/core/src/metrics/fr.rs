//! Full-reference metrics: RMSE, PSNR, SSIM and GMSD.
//!
//! SSIM and GMSD run on luma. Both use only the "valid" region of their
//! filters, so no border convention leaks into the score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::filter::{correlate_valid, gaussian_kernel};
use crate::image::{to_grayscale, Image};

/// PSNR reported for identical images, and the ceiling for all others.
pub const PSNR_CAP: f64 = 80.0;

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const GMSD_C_8BIT: f64 = 170.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrReport {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub gmsd: f64,
}

fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

/// `20 log10(max / rmse)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = rmse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (a.max_value() / e).log10()).min(PSNR_CAP))
}

/// Mean SSIM over the valid region of an 11x11, sigma 1.5 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let win = 2 * SSIM_RADIUS + 1;
    if a.width() < win || a.height() < win {
        return Err(Error::Size(format!(
            "{}x{} image smaller than the {win}x{win} SSIM window",
            a.width(),
            a.height()
        )));
    }
    let (ga, gb) = (to_grayscale(a), to_grayscale(b));
    let (pa, pb) = (ga.plane(0), gb.plane(0));
    let (w, h) = (a.width(), a.height());
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_RADIUS);
    let filt = |p: &[f64]| correlate_valid(p, w, h, &k).0;
    let aa: Vec<f64> = pa.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = pb.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b) = (filt(pa), filt(pb));
    let (e_aa, e_bb, e_ab) = (filt(&aa), filt(&bb), filt(&ab));
    let l = a.max_value();
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// 2x2 block means; odd trailing rows and columns are dropped.
fn half_scale(p: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]));
        }
    }
    (out, ow, oh)
}

/// Prewitt gradient magnitude over the valid region.
fn gradient_magnitude(p: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let at = |dx: isize, dy: isize| {
                p[(y as isize + dy) as usize * w + (x as isize + dx) as usize]
            };
            let gx = (at(1, -1) + at(1, 0) + at(1, 1) - at(-1, -1) - at(-1, 0) - at(-1, 1)) / 3.0;
            let gy = (at(-1, 1) + at(0, 1) + at(1, 1) - at(-1, -1) - at(0, -1) - at(1, -1)) / 3.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Gradient magnitude similarity deviation (lower is better).
pub fn gmsd(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    if a.width() < 6 || a.height() < 6 {
        return Err(Error::Size(format!(
            "{}x{} image too small for GMSD",
            a.width(),
            a.height()
        )));
    }
    let (ga, gb) = (to_grayscale(a), to_grayscale(b));
    let (da, w, h) = half_scale(ga.plane(0), a.width(), a.height());
    let (db, _, _) = half_scale(gb.plane(0), a.width(), a.height());
    let (ma, mb) = (gradient_magnitude(&da, w, h), gradient_magnitude(&db, w, h));
    let scale = a.max_value() / 255.0;
    let c = GMSD_C_8BIT * scale * scale;
    let gms: Vec<f64> = ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| (2.0 * x * y + c) / (x * x + y * y + c))
        .collect();
    let n = gms.len() as f64;
    let mean = gms.iter().sum::<f64>() / n;
    Ok((gms.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n).sqrt())
}

pub fn fr_report(reference: &Image, test: &Image) -> Result<FrReport> {
    Ok(FrReport {
        rmse: rmse(reference, test)?,
        psnr: psnr(reference, test)?,
        ssim: ssim(reference, test)?,
        gmsd: gmsd(reference, test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::textured_image;
    use rand::{Rng, SeedableRng};

    fn random_pair(w: usize, h: usize, seed: u64) -> (Image, Image) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..w * h).map(|_| r.random_range(0.0..255.0)).collect();
        let b: Vec<f64> = (0..w * h).map(|_| r.random_range(0.0..255.0)).collect();
        (
            Image::new(w, h, 1, a, 255.0).unwrap(),
            Image::new(w, h, 1, b, 255.0).unwrap(),
        )
    }

    #[test]
    fn rmse_closed_forms_and_naive_loop() {
        let a = Image::filled(8, 8, 3, 100.0, 255.0).unwrap();
        let b = Image::filled(8, 8, 3, 110.0, 255.0).unwrap();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert!((rmse(&a, &b).unwrap() - 10.0).abs() < 1e-12);
        let (x, y) = random_pair(17, 13, 4);
        let mut acc = 0.0;
        for i in 0..17 * 13 {
            let d = x.data()[i] - y.data()[i];
            acc += d * d;
        }
        assert!((rmse(&x, &y).unwrap() - (acc / 221.0).sqrt()).abs() < 1e-9);
        let small = Image::filled(4, 4, 1, 1.0, 255.0).unwrap();
        assert!(matches!(rmse(&a, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(8, 8, 1, 100.0, 255.0).unwrap();
        let b = Image::filled(8, 8, 1, 101.0, 255.0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), 80.0);
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-4);
        let (x, y) = random_pair(20, 20, 5);
        let e = rmse(&x, &y).unwrap();
        let expect = 10.0 * (255.0f64 * 255.0 / (e * e)).log10();
        assert!((psnr(&x, &y).unwrap() - expect).abs() < 1e-6);
    }

    fn wave_pair() -> (Image, Image) {
        let a = Image::from_fn(48, 40, 255.0, |x, y| {
            let (x, y) = (x as f64, y as f64);
            128.0 + 90.0 * (0.31 * x).sin() * (0.23 * y).cos() + 20.0 * (0.07 * x * y).sin()
        })
        .unwrap();
        let b = Image::from_fn(48, 40, 255.0, |x, y| {
            let v = a.get(x, y, 0);
            0.8 * v + 25.0 + 10.0 * (0.5 * x as f64 + 0.3 * y as f64).cos()
        })
        .unwrap();
        (a, b)
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // skimage.metrics.structural_similarity(a, b, data_range=255,
        // gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
        let (a, b) = wave_pair();
        assert!((ssim(&a, &b).unwrap() - SKIMAGE_SSIM).abs() < 1e-4);
        assert!((ssim(&b, &a).unwrap() - ssim(&a, &b).unwrap()).abs() < 1e-15);
    }

    const SKIMAGE_SSIM: f64 = 0.948_136_491_209_145_8;

    #[test]
    fn ssim_identity_and_negative() {
        let t = textured_image(40, 40, 2);
        assert_eq!(ssim(&t, &t).unwrap(), 1.0);
        let neg = t.with_data(t.data().iter().map(|v| 255.0 - v).collect()).unwrap();
        assert!(ssim(&t, &neg).unwrap() < 0.0);
        let tiny = Image::filled(10, 10, 1, 0.0, 255.0).unwrap();
        assert!(ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn gmsd_matches_naive_oracle() {
        let (a, b) = wave_pair();
        let (w, h) = (24usize, 20usize);
        let down = |img: &Image| -> Vec<Vec<f64>> {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            (img.get(2 * x, 2 * y, 0)
                                + img.get(2 * x + 1, 2 * y, 0)
                                + img.get(2 * x, 2 * y + 1, 0)
                                + img.get(2 * x + 1, 2 * y + 1, 0))
                                / 4.0
                        })
                        .collect()
                })
                .collect()
        };
        let kx = [[1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]];
        let grad = |p: &Vec<Vec<f64>>, x: usize, y: usize| {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    gx += kx[j][i] * p[y + j - 1][x + i - 1] / 3.0;
                    gy += kx[i][j] * p[y + j - 1][x + i - 1] / 3.0;
                }
            }
            (gx * gx + gy * gy).sqrt()
        };
        let (pa, pb) = (down(&a), down(&b));
        let mut map = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let (ga, gb) = (grad(&pa, x, y), grad(&pb, x, y));
                map.push((2.0 * ga * gb + 170.0) / (ga * ga + gb * gb + 170.0));
            }
        }
        let m = map.iter().sum::<f64>() / map.len() as f64;
        let sd = (map.iter().map(|g| (g - m).powi(2)).sum::<f64>() / map.len() as f64).sqrt();
        assert!((gmsd(&a, &b).unwrap() - sd).abs() < 1e-10);
        assert!((gmsd(&b, &a).unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn gmsd_identities() {
        let t = textured_image(32, 32, 8);
        assert_eq!(gmsd(&t, &t).unwrap(), 0.0);
        let c1 = Image::filled(16, 16, 1, 10.0, 255.0).unwrap();
        let c2 = Image::filled(16, 16, 1, 200.0, 255.0).unwrap();
        assert_eq!(gmsd(&c1, &c2).unwrap(), 0.0);
    }
}
