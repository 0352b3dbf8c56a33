use super::check_scale;
use crate::error::Result;
use crate::image::Image;

fn retag(mut out: Image, img: &Image, scale: usize) -> Image {
    out.gsd = img.gsd.map(|g| g / scale as f64);
    out
}

/// Pixel replication.
pub fn upscale_nearest(img: &Image, scale: usize) -> Result<Image> {
    check_scale(scale)?;
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w * scale, h * scale);
    let mut data = Vec::with_capacity(ow * oh * img.channels());
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..oh {
            let row = &p[(y / scale) * w..][..w];
            data.extend((0..ow).map(|x| row[x / scale]));
        }
    }
    let out = Image::new(ow, oh, img.channels(), data, img.max_value())?;
    Ok(retag(out, img, scale))
}

/// Catmull-Rom cubic weight.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Four taps per output index, with half-pixel centres and clamped borders.
fn taps(len: usize, scale: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..len * scale)
        .map(|o| {
            let src = (o as f64 + 0.5) / scale as f64 - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let mut idx = [0; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let i = i0 as isize + k as isize - 1;
                idx[k] = i.clamp(0, len as isize - 1) as usize;
                wts[k] = cubic(t - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable Catmull-Rom bicubic upscaling, clamped to the pixel range.
pub fn upscale_bicubic(img: &Image, scale: usize) -> Result<Image> {
    check_scale(scale)?;
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w * scale, h * scale);
    let xt = taps(w, scale);
    let yt = taps(h, scale);
    let mut data = Vec::with_capacity(ow * oh * img.channels());
    let mut rows = vec![0.0; ow * h];
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..h {
            let r = &p[y * w..][..w];
            for (x, (i, k)) in xt.iter().enumerate() {
                rows[y * ow + x] = (0..4).map(|j| k[j] * r[i[j]]).sum();
            }
        }
        for (i, k) in &yt {
            for x in 0..ow {
                let v: f64 = (0..4).map(|j| k[j] * rows[i[j] * ow + x]).sum();
                data.push(v.clamp(0.0, img.max_value()));
            }
        }
    }
    let out = Image::new(ow, oh, img.channels(), data, img.max_value())?;
    Ok(retag(out, img, scale))
}
