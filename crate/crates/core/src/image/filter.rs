//! Separable linear filtering.

use super::Image;
use crate::error::{Error, Result};

/// Normalised 1-D Gaussian taps on `[-radius, radius]`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Radius that keeps at least four standard deviations of support.
pub fn full_radius(sigma: f64) -> usize {
    ((4.0 * sigma).ceil() as usize).max(1)
}

/// Maps an out-of-range index into `0..n` by symmetric reflection (`-1 -> 0`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Convolves one plane with `kernel` along x then y, reflecting at the borders.
pub fn convolve_plane(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, kv) in kernel.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Gaussian blur of every channel with an explicit kernel radius.
pub fn gaussian_blur(img: &Image, sigma: f64, radius: usize) -> Result<Image> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Param(format!("gaussian sigma {sigma}")));
    }
    let k = gaussian_kernel(sigma, radius);
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        data.extend(convolve_plane(img.plane(c), w, h, &k));
    }
    img.with_data(data)
}

/// "Valid" separable correlation: output is `(w - k + 1) x (h - k + 1)`.
pub fn correlate_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (j, kv) in kernel.iter().enumerate() {
            let src = &tmp[(y + j) * ow..(y + j + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    (out, ow, oh)
}
