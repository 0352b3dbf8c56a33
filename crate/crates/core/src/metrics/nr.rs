//! No-reference measurements: slanted-edge RER, FWHM and MTF at Nyquist, and
//! a homogeneous-patch SNR estimate.
//!
//! Edge chain: per-row edge positions from derivative centroids, a robust line
//! fit, projection of every pixel onto the fitted edge, 0.25 px binning, and
//! normalisation between the two plateaus. The LSF is the finite difference of
//! the binned ESF; the MTF is its Fourier magnitude at 0.5 cycles/px with the
//! difference operator's `sinc` response divided out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_grayscale, Image};

/// Oversampling bin width along the row, in pixels.
pub const BIN_WIDTH: f64 = 0.25;
const MAX_HALF_WIDTH: f64 = 24.0;
const MIN_HALF_WIDTH: f64 = 4.0;
const CENTROID_WINDOW: isize = 10;
const MIN_ROWS: usize = 8;
const INLIER_TOL: f64 = 1.0;
const PLATEAU_BINS: usize = 4;

pub const SNR_TILE: usize = 16;
/// Patches whose 4x4 block means vary by more than this (std / mean) are skipped.
pub const SNR_HOMOGENEITY_CV: f64 = 0.05;

/// Which edge family to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Near-vertical edge, profile along x.
    X,
    /// Near-horizontal edge, profile along y.
    Y,
    /// Edge near 45 degrees.
    Oblique,
}

/// A normalised edge-spread function on a uniform axis centred at its 0.5 crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProfile {
    pub orientation: Orientation,
    /// Distance from the edge along its normal, in pixels.
    pub axis: Vec<f64>,
    pub esf: Vec<f64>,
    /// Axis spacing (0.25 px scaled by the edge's cosine).
    pub spacing: f64,
    /// Fitted edge `x = a + b y` in the (possibly transposed) analysis frame.
    pub line: (f64, f64),
}

impl EdgeProfile {
    /// Linear interpolation of the ESF at normal distance `d`.
    pub fn esf_at(&self, d: f64) -> f64 {
        interp(&self.axis, &self.esf, d)
    }

    /// Finite-difference LSF sampled at the midpoints of the ESF axis.
    pub fn lsf(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.spacing;
        let x = self.axis.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let v = self.esf.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        (x, v)
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + (ys[i + 1] - ys[i]) * t
}

/// Centroid of the same-signed derivative around the row's strongest transition.
fn row_edge(row: &[f64], sign: f64) -> Option<(f64, f64)> {
    let w = row.len();
    let d: Vec<f64> = row.windows(2).map(|p| sign * (p[1] - p[0])).collect();
    let (peak_i, &peak) = d
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    if peak <= 0.0 {
        return None;
    }
    // A symmetric window keeps the centroid unbiased near the borders.
    let r = CENTROID_WINDOW.min(peak_i as isize).min(w as isize - 2 - peak_i as isize);
    if r < 3 {
        return None;
    }
    let (lo, hi) = ((peak_i as isize - r) as usize, (peak_i as isize + r) as usize);
    let (mut m0, mut m1) = (0.0, 0.0);
    for (i, &v) in d.iter().enumerate().take(hi + 1).skip(lo) {
        if v > 0.0 {
            m0 += v;
            m1 += v * (i as f64 + 0.5);
        }
    }
    Some((m1 / m0, peak))
}

/// Least-squares fit `x = a + b y`.
fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut syy, mut sxy) = (0.0, 0.0);
    for &(y, x) in pts {
        syy += (y - my) * (y - my);
        sxy += (y - my) * (x - mx);
    }
    let b = if syy > 0.0 { sxy / syy } else { 0.0 };
    (mx - b * my, b)
}

/// Deterministic RANSAC over evenly spaced candidate pairs, then a refit on inliers.
fn robust_line(pts: &[(f64, f64)]) -> (f64, f64, Vec<(f64, f64)>) {
    let stride = (pts.len() / 64).max(1);
    let cand: Vec<&(f64, f64)> = pts.iter().step_by(stride).collect();
    let inliers = |a: f64, b: f64| {
        pts.iter()
            .filter(|p| (p.1 - a - b * p.0).abs() <= INLIER_TOL)
            .count()
    };
    let mut best = (usize::MAX, 0usize);
    let mut best_count = 0;
    for i in 0..cand.len() {
        for j in i + 1..cand.len() {
            let (p, q) = (cand[i], cand[j]);
            let b = (q.1 - p.1) / (q.0 - p.0);
            let a = p.1 - b * p.0;
            let c = inliers(a, b);
            if c > best_count {
                best_count = c;
                best = (i, j);
            }
        }
    }
    let (a, b) = if best.0 == usize::MAX {
        fit_line(pts)
    } else {
        let (p, q) = (cand[best.0], cand[best.1]);
        let b = (q.1 - p.1) / (q.0 - p.0);
        (p.1 - b * p.0, b)
    };
    let kept: Vec<(f64, f64)> = pts
        .iter()
        .copied()
        .filter(|p| (p.1 - a - b * p.0).abs() <= INLIER_TOL)
        .collect();
    let (a, b) = fit_line(&kept);
    (a, b, kept)
}

fn transpose(p: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut t = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            t[x * h + y] = p[y * w + x];
        }
    }
    t
}

/// Locates the strongest straight edge of the requested family and returns its ESF.
pub fn measure_edge_response(img: &Image, orientation: Orientation) -> Result<EdgeProfile> {
    let luma = to_grayscale(img);
    let (mut w, mut h) = (img.width(), img.height());
    let plane = if orientation == Orientation::Y {
        let t = transpose(luma.plane(0), w, h);
        std::mem::swap(&mut w, &mut h);
        t
    } else {
        luma.plane(0).to_vec()
    };
    if w < 2 * MIN_HALF_WIDTH as usize + 2 || h < MIN_ROWS {
        return Err(Error::EdgeNotFound);
    }
    let rows: Vec<&[f64]> = plane.chunks(w).collect();

    // Edge polarity from the dominant horizontal gradient.
    let total: f64 = rows.iter().map(|r| r[w - 1] - r[0]).sum();
    let sign = if total >= 0.0 { 1.0 } else { -1.0 };
    let min_contrast = 0.02 * img.max_value();
    let found: Vec<(usize, f64, f64)> = rows
        .iter()
        .enumerate()
        .filter_map(|(y, r)| row_edge(r, sign).map(|(x, p)| (y, x, p)))
        .collect();
    let strongest = found.iter().map(|f| f.2).fold(0.0, f64::max);
    if strongest < min_contrast {
        return Err(Error::EdgeNotFound);
    }
    let pts: Vec<(f64, f64)> = found
        .iter()
        .filter(|f| f.2 >= 0.25 * strongest)
        .map(|f| (f.0 as f64, f.1))
        .collect();
    if pts.len() < MIN_ROWS {
        return Err(Error::EdgeNotFound);
    }
    let (a, b, kept) = robust_line(&pts);
    if kept.len() < MIN_ROWS {
        return Err(Error::EdgeNotFound);
    }
    let slope_ok = match orientation {
        Orientation::X | Orientation::Y => b.abs() <= 1.0,
        Orientation::Oblique => (0.5..=1.5).contains(&b.abs()),
    };
    if !slope_ok {
        return Err(Error::EdgeNotFound);
    }

    let y0 = kept.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) as usize;
    let y1 = kept.iter().map(|p| p.0).fold(0.0, f64::max) as usize;
    // Rows near a border contribute only to the bins they reach.
    let reach = (y0..=y1)
        .map(|y| {
            let c = a + b * y as f64;
            c.min((w - 1) as f64 - c)
        })
        .fold(0.0, f64::max);
    let half = (reach.min(MAX_HALF_WIDTH) / BIN_WIDTH).floor() * BIN_WIDTH;
    if half < MIN_HALF_WIDTH {
        return Err(Error::EdgeNotFound);
    }
    let nbins = (2.0 * half / BIN_WIDTH).round() as usize;
    let mut sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for y in y0..=y1 {
        let c = a + b * y as f64;
        let x_lo = (c - half).ceil().max(0.0) as usize;
        let x_hi = ((c + half).floor() as usize).min(w - 1);
        for x in x_lo..=x_hi {
            let u = x as f64 - c;
            let k = ((u + half) / BIN_WIDTH).floor() as usize;
            if k < nbins {
                sum[k] += rows[y][x];
                count[k] += 1;
            }
        }
    }
    let mut esf = fill_bins(&sum, &count).ok_or(Error::EdgeNotFound)?;

    let lo = esf[..PLATEAU_BINS].iter().sum::<f64>() / PLATEAU_BINS as f64;
    let hi = esf[nbins - PLATEAU_BINS..].iter().sum::<f64>() / PLATEAU_BINS as f64;
    if (hi - lo).abs() < min_contrast {
        return Err(Error::EdgeNotFound);
    }
    esf.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));

    let cos = 1.0 / (1.0 + b * b).sqrt();
    let spacing = BIN_WIDTH * cos;
    let raw_axis: Vec<f64> = (0..nbins)
        .map(|k| (-half + (k as f64 + 0.5) * BIN_WIDTH) * cos)
        .collect();
    let centre = half_crossing(&raw_axis, &esf).ok_or(Error::EdgeNotFound)?;
    let axis = raw_axis.iter().map(|x| x - centre).collect();
    Ok(EdgeProfile {
        orientation,
        axis,
        esf,
        spacing,
        line: (a, b),
    })
}

/// Bin means, with empty bins filled by linear interpolation between filled neighbours.
fn fill_bins(sum: &[f64], count: &[usize]) -> Option<Vec<f64>> {
    let filled: Vec<usize> = (0..sum.len()).filter(|&k| count[k] > 0).collect();
    if filled.len() < 2 {
        return None;
    }
    let mut out = vec![0.0; sum.len()];
    for &k in &filled {
        out[k] = sum[k] / count[k] as f64;
    }
    let (first, last) = (filled[0], *filled.last()?);
    for k in 0..first {
        out[k] = out[first];
    }
    for k in last + 1..sum.len() {
        out[k] = out[last];
    }
    for pair in filled.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        for k in i + 1..j {
            let t = (k - i) as f64 / (j - i) as f64;
            out[k] = out[i] + (out[j] - out[i]) * t;
        }
    }
    Some(out)
}

/// The 0.5 crossing nearest the centre of the axis.
fn half_crossing(axis: &[f64], esf: &[f64]) -> Option<f64> {
    let mid = axis.len() / 2;
    (0..axis.len() - 1)
        .filter(|&i| (esf[i] - 0.5) * (esf[i + 1] - 0.5) <= 0.0 && esf[i] != esf[i + 1])
        .min_by_key(|&i| (i as isize - mid as isize).unsigned_abs())
        .map(|i| {
            let t = (0.5 - esf[i]) / (esf[i + 1] - esf[i]);
            axis[i] + t * (axis[i + 1] - axis[i])
        })
}

/// Relative edge response: ESF(+0.5 px) minus ESF(-0.5 px).
pub fn rer(profile: &EdgeProfile) -> f64 {
    profile.esf_at(0.5) - profile.esf_at(-0.5)
}

/// Full width at half maximum of the LSF, in pixels.
pub fn lsf_fwhm(profile: &EdgeProfile) -> Result<f64> {
    let (x, v) = profile.lsf();
    let (peak_i, &peak) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Unavailable("empty LSF".into()))?;
    if peak <= 0.0 {
        return Err(Error::Unavailable("LSF has no positive peak".into()));
    }
    let half = 0.5 * peak;
    let runs = v
        .windows(2)
        .filter(|w| w[0] < half && w[1] >= half)
        .count()
        + usize::from(v[0] >= half);
    if runs != 1 {
        return Err(Error::Unavailable(format!("LSF is not unimodal ({runs} lobes)")));
    }
    let mut l = peak_i;
    while l > 0 && v[l - 1] >= half {
        l -= 1;
    }
    let mut r = peak_i;
    while r + 1 < v.len() && v[r + 1] >= half {
        r += 1;
    }
    if l == 0 || r + 1 == v.len() {
        return Err(Error::Unavailable("LSF half maximum outside the profile".into()));
    }
    let cross = |i: usize, j: usize| x[i] + (half - v[i]) / (v[j] - v[i]) * (x[j] - x[i]);
    Ok(cross(r, r + 1) - cross(l - 1, l))
}

/// MTF at 0.5 cycles/px from the discrete Fourier transform of the LSF.
pub fn mtf_at_nyquist(profile: &EdgeProfile) -> f64 {
    let (x, v) = profile.lsf();
    let f = 0.5;
    let (mut re, mut im) = (0.0, 0.0);
    for (xi, vi) in x.iter().zip(&v) {
        let ph = 2.0 * std::f64::consts::PI * f * xi;
        re += vi * ph.cos();
        im -= vi * ph.sin();
    }
    let dc: f64 = v.iter().sum();
    if dc == 0.0 {
        return 0.0;
    }
    let arg = std::f64::consts::PI * f * profile.spacing;
    let diff_response = arg.sin() / arg;
    ((re * re + im * im).sqrt() / dc.abs() / diff_response).clamp(0.0, 1.0)
}

/// Median and mean SNR over homogeneous patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub median: f64,
    pub mean: f64,
    pub patches: usize,
}

/// Residual std after removing the best-fitting plane from a square patch.
fn plane_residual_std(p: &[f64], n: usize) -> f64 {
    // Centred coordinates make the plane's normal equations diagonal.
    let c = (n as f64 - 1.0) / 2.0;
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let (mut sx, mut sy, mut sxx) = (0.0, 0.0, 0.0);
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let v = p[y * n + x] - mean;
            sx += dx * v;
            sy += dy * v;
            sxx += dx * dx;
        }
    }
    let (gx, gy) = (sx / sxx, sy / sxx);
    let mut ss = 0.0;
    for y in 0..n {
        for x in 0..n {
            let r = p[y * n + x] - mean - gx * (x as f64 - c) - gy * (y as f64 - c);
            ss += r * r;
        }
    }
    (ss / (p.len() - 3) as f64).sqrt()
}

/// SNR (patch mean over noise std) from homogeneous 16x16 tiles.
pub fn estimate_snr(img: &Image) -> Result<SnrEstimate> {
    let (w, h) = (img.width(), img.height());
    if w < 64 || h < 64 {
        return Err(Error::Size(format!("{w}x{h} image, SNR needs at least 64x64")));
    }
    let luma = to_grayscale(img);
    let p = luma.plane(0);
    let n = SNR_TILE;
    let mut values = Vec::new();
    let mut tile = vec![0.0; n * n];
    for ty in 0..h / n {
        for tx in 0..w / n {
            for y in 0..n {
                let src = (ty * n + y) * w + tx * n;
                tile[y * n..(y + 1) * n].copy_from_slice(&p[src..src + n]);
            }
            let mean = tile.iter().sum::<f64>() / tile.len() as f64;
            if mean <= 0.0 {
                continue;
            }
            let blocks: Vec<f64> = (0..16)
                .map(|b| {
                    let (bx, by) = (b % 4 * 4, b / 4 * 4);
                    (0..4)
                        .flat_map(|y| (0..4).map(move |x| (x, y)))
                        .map(|(x, y)| tile[(by + y) * n + bx + x])
                        .sum::<f64>()
                        / 16.0
                })
                .collect();
            let bm = blocks.iter().sum::<f64>() / 16.0;
            let bsd = (blocks.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / 16.0).sqrt();
            if bsd / bm >= SNR_HOMOGENEITY_CV {
                continue;
            }
            let sd = plane_residual_std(&tile, n);
            if sd > 1e-12 * mean {
                values.push(mean / sd);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Unavailable("no homogeneous noisy patch".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let patches = values.len();
    values.sort_by(f64::total_cmp);
    let median = if patches % 2 == 1 {
        values[patches / 2]
    } else {
        0.5 * (values[patches / 2 - 1] + values[patches / 2])
    };
    Ok(SnrEstimate {
        median,
        mean,
        patches,
    })
}

/// All no-reference measurements of one image; failed ones are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NrReport {
    pub snr_median: Option<f64>,
    pub snr_mean: Option<f64>,
    pub rer_x: Option<f64>,
    pub rer_y: Option<f64>,
    pub rer_oblique: Option<f64>,
    pub mtf_nyq_x: Option<f64>,
    pub mtf_nyq_y: Option<f64>,
    pub fwhm_x: Option<f64>,
    pub fwhm_y: Option<f64>,
}

fn mean_xy(x: Option<f64>, y: Option<f64>) -> Option<f64> {
    match (x, y) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (a, b) => a.or(b),
    }
}

impl NrReport {
    pub fn rer_xy(&self) -> Option<f64> {
        mean_xy(self.rer_x, self.rer_y)
    }

    pub fn mtf_xy(&self) -> Option<f64> {
        mean_xy(self.mtf_nyq_x, self.mtf_nyq_y)
    }

    pub fn fwhm_xy(&self) -> Option<f64> {
        mean_xy(self.fwhm_x, self.fwhm_y)
    }
}

/// Best-effort measurement of everything in [`NrReport`].
pub fn measure_nr(img: &Image) -> NrReport {
    let mut r = NrReport::default();
    if let Ok(s) = estimate_snr(img) {
        r.snr_median = Some(s.median);
        r.snr_mean = Some(s.mean);
    }
    if let Ok(p) = measure_edge_response(img, Orientation::X) {
        r.rer_x = Some(rer(&p));
        r.mtf_nyq_x = Some(mtf_at_nyquist(&p));
        r.fwhm_x = lsf_fwhm(&p).ok();
    }
    if let Ok(p) = measure_edge_response(img, Orientation::Y) {
        r.rer_y = Some(rer(&p));
        r.mtf_nyq_y = Some(mtf_at_nyquist(&p));
        r.fwhm_y = lsf_fwhm(&p).ok();
    }
    if let Ok(p) = measure_edge_response(img, Orientation::Oblique) {
        r.rer_oblique = Some(rer(&p));
    }
    r
}
