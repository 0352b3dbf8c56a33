//! Planar floating-point rasters and the geometric primitives shared by every
//! other module: grayscale conversion, bilinear resampling, random crops,
//! circular padding and integer-factor downsampling.
//!
//! Samples stay in their native range `[0, max_value]`; normalisation to
//! `[0, 1]` happens only when images are handed to the neural network.

pub mod filter;
mod io;

pub use io::{load_image, save_image, sidecar_path};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Luma weights used by [`to_grayscale`].
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A planar raster with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    max_value: f64,
    /// Ground sampling distance in cm/px, when known.
    pub gsd: Option<f64>,
}

impl Image {
    /// Builds an image from planar samples (`channel, row, column` order).
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        max_value: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("{width}x{height} image")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Param(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if !(max_value.is_finite() && max_value > 0.0) {
            return Err(Error::Param(format!("max_value {max_value}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > max_value)
        {
            return Err(Error::Param(format!(
                "sample {bad} outside [0, {max_value}]"
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
            max_value,
            gsd: None,
        })
    }

    /// Builds an image from samples that may fall outside the range; they are clamped.
    pub fn from_clamped(
        width: usize,
        height: usize,
        channels: usize,
        mut data: Vec<f64>,
        max_value: f64,
    ) -> Result<Self> {
        for v in data.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max_value) };
        }
        Image::new(width, height, channels, data, max_value)
    }

    /// A constant single- or multi-channel image.
    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        value: f64,
        max_value: f64,
    ) -> Result<Self> {
        Image::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
            max_value,
        )
    }

    /// A single-channel image from a function of `(x, y)`; values are clamped.
    pub fn from_fn(
        width: usize,
        height: usize,
        max_value: f64,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image::from_clamped(width, height, 1, data, max_value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Same geometry and metadata, new samples (clamped to range).
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut out =
            Image::from_clamped(self.width, self.height, self.channels, data, self.max_value)?;
        out.gsd = self.gsd;
        Ok(out)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Samples scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|v| v / self.max_value).collect()
    }

    /// Copies out a sub-rectangle.
    pub fn crop(&self, rect: CropRect) -> Result<Image> {
        if rect.side == 0 || rect.x + rect.side > self.width || rect.y + rect.side > self.height {
            return Err(Error::Size(format!(
                "crop {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let s = rect.side;
        let mut data = Vec::with_capacity(s * s * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in rect.y..rect.y + s {
                let row = y * self.width;
                data.extend_from_slice(&plane[row + rect.x..row + rect.x + s]);
            }
        }
        let mut out = Image::new(s, s, self.channels, data, self.max_value)?;
        out.gsd = self.gsd;
        Ok(out)
    }

    /// The top-left `width x height` region.
    pub fn truncate(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || width > self.width || height > self.height {
            return Err(Error::Size(format!(
                "truncate {}x{} to {width}x{height}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..height {
                data.extend_from_slice(&plane[y * self.width..y * self.width + width]);
            }
        }
        let mut out = Image::new(width, height, self.channels, data, self.max_value)?;
        out.gsd = self.gsd;
        Ok(out)
    }
}

/// A square window into an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

/// Converts to a single luma channel (0.299, 0.587, 0.114); 1-channel input is returned as is.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let n = img.width * img.height;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..n)
        .map(|i| {
            (LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i])
                .clamp(0.0, img.max_value)
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
        max_value: img.max_value,
        gsd: img.gsd,
    }
}

/// Resamples to exactly `out_w x out_h` with half-pixel-centre bilinear interpolation.
///
/// Source coordinates outside the raster are clamped to the border pixels.
pub fn resize_to(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Size(format!("resize to {out_w}x{out_h}")));
    }
    let (w, h) = (img.width, img.height);
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let taps = |out: usize, scale: f64, len: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let xt = taps(out_w, sx, w);
    let yt = taps(out_h, sy, h);
    let mut data = Vec::with_capacity(out_w * out_h * img.channels);
    for c in 0..img.channels {
        let p = img.plane(c);
        for &(y0, y1, fy) in &yt {
            let r0 = &p[y0 * w..(y0 + 1) * w];
            let r1 = &p[y1 * w..(y1 + 1) * w];
            for &(x0, x1, fx) in &xt {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                data.push(top + (bot - top) * fy);
            }
        }
    }
    let mut out = Image::from_clamped(out_w, out_h, img.channels, data, img.max_value)?;
    out.gsd = img.gsd;
    Ok(out)
}

/// Bilinear resampling by `scale`; output dims are `round(dim * scale)`.
///
/// The GSD tag, when present, is divided by `scale`.
pub fn resize_bilinear(img: &Image, scale: f64) -> Result<Image> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Param(format!("scale {scale}")));
    }
    if scale == 1.0 {
        return Ok(img.clone());
    }
    let out_w = (img.width as f64 * scale).round() as usize;
    let out_h = (img.height as f64 * scale).round() as usize;
    let mut out = resize_to(img, out_w, out_h)?;
    out.gsd = img.gsd.map(|g| g / scale);
    Ok(out)
}

/// Draws `count` uniformly random square windows of `side` pixels.
///
/// Crop `i` comes from its own stream derived from `(seed, i)`, so the list is
/// reproducible and any prefix of it is stable when `count` grows.
pub fn extract_crops(img: &Image, side: usize, count: usize, seed: u64) -> Result<Vec<CropRect>> {
    if side == 0 || count == 0 {
        return Err(Error::Param(format!("crop side {side}, count {count}")));
    }
    if img.width < side || img.height < side {
        return Err(Error::Size(format!(
            "{}x{} image smaller than crop side {side}",
            img.width, img.height
        )));
    }
    let (nx, ny) = (img.width - side + 1, img.height - side + 1);
    Ok((0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[i as u64]);
            CropRect {
                x: r.random_range(0..nx),
                y: r.random_range(0..ny),
                side,
            }
        })
        .collect())
}

/// Extends each dimension smaller than `target_side` by wrap-around repetition.
///
/// Padding is split between both borders; an odd remainder goes to the trailing border.
pub fn circular_pad(img: &Image, target_side: usize) -> Image {
    if img.width >= target_side && img.height >= target_side {
        return img.clone();
    }
    let ow = img.width.max(target_side);
    let oh = img.height.max(target_side);
    let lead_x = (ow - img.width) / 2;
    let lead_y = (oh - img.height) / 2;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut data = Vec::with_capacity(ow * oh * img.channels);
    for c in 0..img.channels {
        let p = img.plane(c);
        for y in 0..oh {
            let sy = (y as isize - lead_y as isize).rem_euclid(h) as usize;
            for x in 0..ow {
                let sx = (x as isize - lead_x as isize).rem_euclid(w) as usize;
                data.push(p[sy * img.width + sx]);
            }
        }
    }
    Image {
        width: ow,
        height: oh,
        channels: img.channels,
        data,
        max_value: img.max_value,
        gsd: img.gsd,
    }
}

/// Reduces by an integer factor in {2, 3, 4} through [`resize_bilinear`].
///
/// Dimensions are first truncated to the largest multiple of `factor`.
pub fn downsample(img: &Image, factor: usize) -> Result<Image> {
    if !(2..=4).contains(&factor) {
        return Err(Error::Param(format!("downsample factor {factor}")));
    }
    if img.width < factor || img.height < factor {
        return Err(Error::Size(format!(
            "{}x{} image smaller than factor {factor}",
            img.width, img.height
        )));
    }
    let tw = img.width / factor * factor;
    let th = img.height / factor * factor;
    let base = if tw != img.width || th != img.height {
        let mut data = Vec::with_capacity(tw * th * img.channels);
        for c in 0..img.channels {
            let p = img.plane(c);
            for y in 0..th {
                data.extend_from_slice(&p[y * img.width..y * img.width + tw]);
            }
        }
        let mut t = Image::new(tw, th, img.channels, data, img.max_value)?;
        t.gsd = img.gsd;
        t
    } else {
        img.clone()
    };
    let mut out = resize_to(&base, tw / factor, th / factor)?;
    out.gsd = img.gsd.map(|g| g * factor as f64);
    Ok(out)
}
