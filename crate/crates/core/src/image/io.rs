use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Sidecar {
    gsd_cm_per_px: f64,
}

/// Path of the JSON sidecar holding metadata that rasters cannot carry.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Reads an 8- or 16-bit grayscale or RGB PNG/TIFF.
///
/// `max_value` follows the bit depth; a `<file>.meta.json` sidecar, when present,
/// supplies the GSD tag.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, max_value, interleaved): (usize, f64, Vec<f64>) = match dynimg {
        DynamicImage::ImageLuma8(b) => (1, 255.0, b.into_raw().into_iter().map(f64::from).collect()),
        DynamicImage::ImageRgb8(b) => (3, 255.0, b.into_raw().into_iter().map(f64::from).collect()),
        DynamicImage::ImageLuma16(b) => {
            (1, 65535.0, b.into_raw().into_iter().map(f64::from).collect())
        }
        DynamicImage::ImageRgb16(b) => {
            (3, 65535.0, b.into_raw().into_iter().map(f64::from).collect())
        }
        other => {
            return Err(decode_err(format!(
                "unsupported pixel layout {:?} (need 8/16-bit gray or RGB)",
                other.color()
            )))
        }
    };
    let n = w * h;
    let mut planar = vec![0.0; interleaved.len()];
    for i in 0..n {
        for c in 0..channels {
            planar[c * n + i] = interleaved[i * channels + c];
        }
    }
    let mut img = Image::new(w, h, channels, planar, max_value)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: side.clone(),
            reason: e.to_string(),
        })?;
        img.gsd = Some(meta.gsd_cm_per_px);
    }
    Ok(img)
}

/// Writes a PNG or TIFF (chosen by extension), rounding samples to integers.
///
/// Images with `max_value` 255 are stored as 8-bit, 65535 as 16-bit. A GSD tag
/// is written to the sidecar file.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let enc_err = |reason: String| Error::Encode {
        path: path.to_path_buf(),
        reason,
    };
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let n = w * h;
    let interleaved = |i: usize| -> f64 {
        let (p, c) = (i / ch, i % ch);
        img.data()[c * n + p].round()
    };
    let dynimg = match (img.max_value(), ch) {
        (m, 1) if m == 255.0 => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(
                w as u32,
                h as u32,
                (0..n).map(|i| interleaved(i) as u8).collect(),
            )
            .ok_or_else(|| enc_err("buffer size".into()))?,
        ),
        (m, 3) if m == 255.0 => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(
                w as u32,
                h as u32,
                (0..n * 3).map(|i| interleaved(i) as u8).collect(),
            )
            .ok_or_else(|| enc_err("buffer size".into()))?,
        ),
        (m, 1) if m == 65535.0 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(
                w as u32,
                h as u32,
                (0..n).map(|i| interleaved(i) as u16).collect(),
            )
            .ok_or_else(|| enc_err("buffer size".into()))?,
        ),
        (m, 3) if m == 65535.0 => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(
                w as u32,
                h as u32,
                (0..n * 3).map(|i| interleaved(i) as u16).collect(),
            )
            .ok_or_else(|| enc_err("buffer size".into()))?,
        ),
        (m, _) => return Err(enc_err(format!("no integer format for max_value {m}"))),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    dynimg
        .save(path)
        .map_err(|e| enc_err(e.to_string()))?;
    if let Some(gsd) = img.gsd {
        let side = sidecar_path(path);
        let text = serde_json::to_string(&Sidecar { gsd_cm_per_px: gsd })
            .map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn png_8bit_white() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        save_image(&Image::filled(5, 4, 1, 255.0, 255.0).unwrap(), &p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.max_value(), 255.0);
        assert!(img.data().iter().all(|v| *v == 255.0));
    }

    #[test]
    fn tiff_16bit_black() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.tif");
        save_image(&Image::filled(6, 3, 3, 0.0, 65535.0).unwrap(), &p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.max_value(), 65535.0);
        assert_eq!(img.channels(), 3);
        assert!(img.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn roundtrip_random_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = crate::rng::stream(4, &[]);
        for (name, ch, max) in [("a.png", 1, 255.0), ("b.png", 3, 255.0), ("c.tiff", 1, 65535.0)] {
            let data: Vec<f64> = (0..64 * 64 * ch)
                .map(|_| r.random_range(0..=max as u32) as f64)
                .collect();
            let mut img = Image::new(64, 64, ch, data, max).unwrap();
            img.gsd = Some(31.0);
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn decode_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not a png").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("junk.png"), "{err}");
        assert!(load_image(dir.path().join("missing.png")).is_err());
    }

}
