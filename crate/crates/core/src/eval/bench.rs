//! Dataset and super-resolution benchmark reports with CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::score::{aggregate_score, ScoreConvention};
use crate::error::{Error, Result};
use crate::image::{downsample, load_image, resize_to, Image};
use crate::metrics::{fr_report, measure_nr, FrReport, NrReport};
use crate::modifiers::{apply_blur, ModifierKind};
use crate::par::{self, Execution};
use crate::regressor::{predict_quality, PartialQuality, QmrNet};
use crate::rng::derive_seed;
use crate::sr::{apply_sr, SrMethod};

/// Cell text for a value that could not be computed.
pub const UNAVAILABLE: &str = "-";

pub const QMR_HEADER: &str = "Modifier,blur,snr,rer,F,GSD,score";
pub const FR_HEADER: &str = "Modifier,ssim,psnr,gmsd";
pub const NR_HEADER: &str = "Modifier,snr_Mdn,snr_M,RER(XY),MTF(XY),FWHM(XY)";

/// Blur applied to HR before downsampling when `blur_lr` is set.
pub const LR_PRE_BLUR: f64 = 1.0;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "tif", "tiff", "jpg", "jpeg"];

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.decimals$}"),
        _ => UNAVAILABLE.into(),
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn score_of(q: &PartialQuality, convention: &ScoreConvention) -> Option<f64> {
    q.complete().ok().and_then(|v| aggregate_score(&v, convention).ok())
}

fn mean_quality(rows: &[PartialQuality]) -> PartialQuality {
    let m = |k: ModifierKind| mean_of(rows.iter().map(|q| q.get(k)));
    PartialQuality {
        blur_sigma: m(ModifierKind::Blur),
        snr: m(ModifierKind::Snr),
        rer: m(ModifierKind::Rer),
        sharpness_f: m(ModifierKind::Sharpness),
        gsd: m(ModifierKind::Gsd),
    }
}

fn qmr_line(label: &str, q: &PartialQuality, score: Option<f64>) -> String {
    format!(
        "{label},{},{},{},{},{},{}\n",
        cell(q.blur_sigma, 3),
        cell(q.snr, 2),
        cell(q.rer, 3),
        cell(q.sharpness_f, 3),
        cell(q.gsd, 3),
        cell(score, 3)
    )
}

/// One labelled row of predicted quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub label: String,
    pub quality: PartialQuality,
    /// Present only when every parameter was predicted.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub images: Vec<QualityRow>,
    /// Column means; the score is computed from the means.
    pub mean: QualityRow,
    pub skipped: Vec<String>,
}

impl DatasetReport {
    /// Per-image rows followed by the dataset mean row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{QMR_HEADER}\n");
        for r in self.images.iter().chain([&self.mean]) {
            out.push_str(&qmr_line(&r.label, &r.quality, r.score));
        }
        out
    }
}

fn file_label(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

/// Predicts a quality vector for every image and averages the columns.
///
/// Image `i` uses crop seed `derive_seed(seed, [i])`. Unreadable images are
/// skipped and listed in the report.
pub fn benchmark_dataset(
    models: &[&QmrNet],
    images: &[PathBuf],
    label: &str,
    crops: usize,
    seed: u64,
    convention: &ScoreConvention,
) -> Result<DatasetReport> {
    convention.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("no images to benchmark".into()));
    }
    let indexed: Vec<(usize, &PathBuf)> = images.iter().enumerate().collect();
    let results = par::map_slice(Execution::Parallel, &indexed, |&(i, p)| {
        let img = load_image(p)?;
        predict_quality(models, &img, crops, derive_seed(seed, &[i as u64]))
    });
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for ((_, p), r) in indexed.iter().zip(results) {
        match r {
            Ok(q) => rows.push(QualityRow {
                label: file_label(p),
                score: score_of(&q, convention),
                quality: q,
            }),
            Err(e @ (Error::Decode { .. } | Error::Io { .. })) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push(p.display().to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no readable images".into()));
    }
    let q = mean_quality(&rows.iter().map(|r| r.quality).collect::<Vec<_>>());
    Ok(DatasetReport {
        mean: QualityRow {
            label: label.into(),
            score: score_of(&q, convention),
            quality: q,
        },
        images: rows,
        skipped,
    })
}

/// Per-row means over the benchmark images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrRow {
    pub label: String,
    pub fr: Option<FrReport>,
    pub nr: NrReport,
    pub quality: QualityRow,
    /// Images on which this row failed.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrReport {
    pub scale: usize,
    pub blur_lr: bool,
    /// `LR`, each method in order, then `HR`.
    pub rows: Vec<SrRow>,
}

impl SrReport {
    pub fn fr_csv(&self) -> String {
        let mut out = format!("{FR_HEADER}\n");
        for r in &self.rows {
            let f = r.fr.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.label,
                cell(f.map(|f| f.ssim), 3),
                cell(f.map(|f| f.psnr), 3),
                cell(f.map(|f| f.gmsd), 4)
            );
        }
        out
    }

    pub fn nr_csv(&self) -> String {
        let mut out = format!("{NR_HEADER}\n");
        for r in &self.rows {
            let n = &r.nr;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.label,
                cell(n.snr_median, 2),
                cell(n.snr_mean, 2),
                cell(n.rer_xy(), 3),
                cell(n.mtf_xy(), 3),
                cell(n.fwhm_xy(), 3)
            );
        }
        out
    }

    pub fn qmr_csv(&self) -> String {
        let mut out = format!("{QMR_HEADER}\n");
        for r in &self.rows {
            out.push_str(&qmr_line(&r.label, &r.quality.quality, r.quality.score));
        }
        out
    }
}

struct Measured {
    fr: Option<FrReport>,
    nr: NrReport,
    quality: Option<PartialQuality>,
}

fn measure(hr: &Image, test: &Image, models: &[&QmrNet], crops: usize, seed: u64) -> Result<Measured> {
    Ok(Measured {
        fr: Some(fr_report(hr, test)?),
        nr: measure_nr(test),
        quality: if models.is_empty() {
            None
        } else {
            Some(predict_quality(models, test, crops, seed)?)
        },
    })
}

fn mean_fr(items: &[&FrReport]) -> Option<FrReport> {
    if items.is_empty() {
        return None;
    }
    let m = |f: fn(&FrReport) -> f64| items.iter().map(|r| f(r)).sum::<f64>() / items.len() as f64;
    Some(FrReport {
        rmse: m(|r| r.rmse),
        psnr: m(|r| r.psnr),
        ssim: m(|r| r.ssim),
        gmsd: m(|r| r.gmsd),
    })
}

fn mean_nr(items: &[&NrReport]) -> NrReport {
    let m = |f: fn(&NrReport) -> Option<f64>| mean_of(items.iter().map(|r| f(r)));
    NrReport {
        snr_median: m(|r| r.snr_median),
        snr_mean: m(|r| r.snr_mean),
        rer_x: m(|r| r.rer_x),
        rer_y: m(|r| r.rer_y),
        rer_oblique: m(|r| r.rer_oblique),
        mtf_nyq_x: m(|r| r.mtf_nyq_x),
        mtf_nyq_y: m(|r| r.mtf_nyq_y),
        fwhm_x: m(|r| r.fwhm_x),
        fwhm_y: m(|r| r.fwhm_y),
    }
}

/// Degrades each HR image, super-resolves it with every method and reports
/// full-reference, no-reference and predicted-quality means per row.
///
/// HR is cropped to a multiple of `scale`; LR is its [`downsample`], optionally
/// after a sigma 1 blur. The `LR` row is LR resized back to HR size (bilinear).
/// A method that fails on an image contributes nothing to its row for that
/// image; the run continues.
#[allow(clippy::too_many_arguments)]
pub fn benchmark_sr(
    methods: &[SrMethod],
    hr_images: &[PathBuf],
    scale: usize,
    blur_lr: bool,
    models: &[&QmrNet],
    crops: usize,
    seed: u64,
    convention: &ScoreConvention,
) -> Result<SrReport> {
    convention.validate()?;
    if hr_images.is_empty() {
        return Err(Error::Empty("no HR images".into()));
    }
    if let Some(m) = methods.iter().find(|m| m.scale() != scale) {
        return Err(Error::Param(format!(
            "method {} is x{}, benchmark is x{scale}",
            m.name(),
            m.scale()
        )));
    }
    let rows = methods.len() + 2;
    let indexed: Vec<(usize, &PathBuf)> = hr_images.iter().enumerate().collect();
    let per_image = par::map_slice(Execution::Parallel, &indexed, |&(i, p)| {
        let img = load_image(p)?;
        let (w, h) = (img.width() / scale * scale, img.height() / scale * scale);
        if w < 8 * scale || h < 8 * scale {
            return Err(Error::Size(format!(
                "{}: {}x{} too small for x{scale}",
                p.display(),
                img.width(),
                img.height()
            )));
        }
        let hr = img.truncate(w, h)?;
        let degraded = if blur_lr { apply_blur(&hr, LR_PRE_BLUR)? } else { hr.clone() };
        let lr = downsample(&degraded, scale)?;
        let s = derive_seed(seed, &[i as u64]);
        let mut out: Vec<Result<Measured>> = Vec::with_capacity(rows);
        out.push(resize_to(&lr, w, h).and_then(|up| measure(&hr, &up, models, crops, s)));
        for m in methods {
            out.push(apply_sr(m, &lr).and_then(|sr| {
                if (sr.width(), sr.height()) != (w, h) {
                    return Err(Error::Dimension(format!("{} output size", m.name())));
                }
                measure(&hr, &sr, models, crops, s)
            }));
        }
        out.push(measure(&hr, &hr, models, crops, s));
        Ok(out)
    });
    let mut table: Vec<Vec<Measured>> = (0..rows).map(|_| Vec::new()).collect();
    let mut failures = vec![0usize; rows];
    for (r, (_, p)) in per_image.into_iter().zip(&indexed) {
        for (k, m) in r?.into_iter().enumerate() {
            match m {
                Ok(m) => table[k].push(m),
                Err(e) => {
                    log::warn!("row {k} failed on {}: {e}", p.display());
                    failures[k] += 1;
                }
            }
        }
    }
    let labels: Vec<String> = std::iter::once("LR".to_string())
        .chain(methods.iter().map(SrMethod::name))
        .chain(std::iter::once("HR".to_string()))
        .collect();
    let rows = labels
        .into_iter()
        .zip(table)
        .zip(failures)
        .map(|((label, ms), failures)| {
            let q: Vec<PartialQuality> = ms.iter().filter_map(|m| m.quality).collect();
            let quality = mean_quality(&q);
            SrRow {
                fr: mean_fr(&ms.iter().filter_map(|m| m.fr.as_ref()).collect::<Vec<_>>()),
                nr: mean_nr(&ms.iter().map(|m| &m.nr).collect::<Vec<_>>()),
                quality: QualityRow {
                    label: label.clone(),
                    score: score_of(&quality, convention),
                    quality,
                },
                label,
                failures,
            }
        })
        .collect();
    Ok(SrReport {
        scale,
        blur_lr,
        rows,
    })
}
