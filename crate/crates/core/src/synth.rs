//! Deterministic synthetic rasters: textured scenes and edge phantoms.
//!
//! Textures stand in for aerial crops when training at desk scale; phantoms
//! are analytic straight edges used to validate the edge-response chain.

use rand::Rng;
use statrs::function::erf::erfc;

use crate::image::Image;
use crate::rng;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// An 8-bit grayscale scene of sharp-edged rectangles and discs.
///
/// Samples are integers in `[0, 255]`, so the image survives a PNG round trip.
pub fn textured_image(width: usize, height: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, &[0x7e57]);
    let background = r.random_range(90.0..170.0);
    let mut data = vec![background; width * height];
    let area = (width * height) as f64;
    let shapes = ((area / 340.0) as usize).max(12);
    let max_extent = (width.min(height) / 3).max(4);
    for _ in 0..shapes {
        let value: f64 = r.random_range(20.0..235.0);
        let cx = r.random_range(0.0..width as f64);
        let cy = r.random_range(0.0..height as f64);
        let ex = r.random_range(2.0..max_extent as f64);
        let ey = r.random_range(2.0..max_extent as f64);
        let disc = r.random_bool(0.4);
        let (x0, x1) = ((cx - ex).max(0.0) as usize, ((cx + ex).ceil() as usize).min(width));
        let (y0, y1) = ((cy - ey).max(0.0) as usize, ((cy + ey).ceil() as usize).min(height));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / ex, (y as f64 + 0.5 - cy) / ey);
                let inside = if disc {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    data[y * width + x] = value;
                }
            }
        }
    }
    for v in data.iter_mut() {
        *v = v.round();
    }
    Image::new(width, height, 1, data, 255.0).expect("texture samples are in range")
}

/// A straight edge rendered analytically, optionally blurred by a Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct EdgePhantom {
    pub width: usize,
    pub height: usize,
    /// Horizontal shift of the edge per row (`dx/dy`); 0 is a vertical edge.
    pub slope: f64,
    /// Edge x position at row 0, in pixel-centre coordinates.
    pub x0: f64,
    /// Gaussian blur along the edge normal; 0 renders an ideal step.
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
    pub max_value: f64,
    /// Transposes the result so the edge runs horizontally.
    pub horizontal: bool,
}

impl EdgePhantom {
    /// A 1-in-4 slanted vertical edge, dark on the left, 64x96 px in 8-bit range.
    pub fn slanted(sigma: f64) -> Self {
        EdgePhantom {
            width: 64,
            height: 96,
            slope: 0.25,
            x0: 19.375,
            sigma,
            low: 40.0,
            high: 210.0,
            max_value: 255.0,
            horizontal: false,
        }
    }

    fn profile(&self, d: f64) -> f64 {
        let t = if self.sigma > 0.0 {
            normal_cdf(d / self.sigma)
        } else if d > 0.0 {
            1.0
        } else if d < 0.0 {
            0.0
        } else {
            0.5
        };
        self.low + (self.high - self.low) * t
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        (x - self.x0 - self.slope * y) / (1.0 + self.slope * self.slope).sqrt()
    }

    /// Point-sampled at pixel centres.
    pub fn render(&self) -> Image {
        self.build(|x, y| self.profile(self.distance(x, y)))
    }

    /// Integrated over each pixel's area (16x16 supersampling).
    pub fn render_area(&self) -> Image {
        const SS: usize = 16;
        self.build(|x, y| {
            let mut acc = 0.0;
            for j in 0..SS {
                for i in 0..SS {
                    let sx = x - 0.5 + (i as f64 + 0.5) / SS as f64;
                    let sy = y - 0.5 + (j as f64 + 0.5) / SS as f64;
                    acc += self.profile(self.distance(sx, sy));
                }
            }
            acc / (SS * SS) as f64
        })
    }

    fn build(&self, f: impl Fn(f64, f64) -> f64) -> Image {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = f(x as f64, y as f64);
            }
        }
        if self.horizontal {
            let mut t = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    t[x * h + y] = data[y * w + x];
                }
            }
            Image::from_clamped(h, w, 1, t, self.max_value).expect("phantom geometry")
        } else {
            Image::from_clamped(w, h, 1, data, self.max_value).expect("phantom geometry")
        }
    }
}
