//! Crop-averaged prediction and quality vectors.

use serde::{Deserialize, Serialize};

use super::QmrNet;
use crate::error::{Error, Result};
use crate::image::{circular_pad, extract_crops, Image};
use crate::modifiers::{ModifierKind, ParamGrid};
use crate::nn::Tensor4;
use crate::par::{self, Execution};

/// One head's prediction over its grid intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    pub kind: ModifierKind,
    pub grid: ParamGrid,
    /// Crop-averaged probabilities, renormalised to sum to one.
    pub probs: Vec<f64>,
    /// Classes with probability at or above the soft threshold.
    pub labels: Vec<usize>,
    pub argmax: usize,
    /// Grid value of `argmax`.
    pub value: f64,
}

impl PredictionDistribution {
    /// Builds a distribution from per-crop probability sums.
    pub fn from_sum(grid: &ParamGrid, sum: &[f64], threshold: f64) -> Result<Self> {
        let total: f64 = sum.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NonFinite(format!("probability mass {total}")));
        }
        let probs: Vec<f64> = sum.iter().map(|v| v / total).collect();
        let mut argmax = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[argmax] {
                argmax = i;
            }
        }
        let labels = (0..probs.len()).filter(|&i| probs[i] >= threshold).collect();
        Ok(PredictionDistribution {
            kind: grid.kind(),
            grid: grid.clone(),
            labels,
            argmax,
            value: grid.class_to_value(argmax),
            probs,
        })
    }
}

/// The `crops` network inputs for `img`: circular padding to the input side, then seeded crops.
pub fn crop_inputs(img: &Image, side: usize, crops: usize, seed: u64) -> Result<Vec<Tensor4>> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Size("empty image".into()));
    }
    let padded = circular_pad(img, side);
    extract_crops(&padded, side, crops, seed)?
        .into_iter()
        .map(|r| padded.crop(r).map(|c| Tensor4::from_image(&c)))
        .collect()
}

impl QmrNet {
    /// Per-crop probabilities: `result[crop][head]`.
    pub fn crop_probabilities(&self, inputs: &[Tensor4]) -> Result<Vec<Vec<Vec<f64>>>> {
        par::map_slice(Execution::Parallel, inputs, |x| {
            Ok(self
                .all_probabilities(x)?
                .into_iter()
                .map(Tensor4::into_data)
                .collect())
        })
        .into_iter()
        .collect()
    }

    /// Averages per-crop probabilities (after softmax) into one distribution per head.
    pub fn distributions(&self, per_crop: &[Vec<Vec<f64>>]) -> Result<Vec<PredictionDistribution>> {
        if per_crop.is_empty() {
            return Err(Error::Empty("no crops".into()));
        }
        self.grids()
            .iter()
            .enumerate()
            .map(|(h, g)| {
                let mut sum = vec![0.0; g.n()];
                for crop in per_crop {
                    sum.iter_mut().zip(&crop[h]).for_each(|(a, b)| *a += b);
                }
                sum.iter_mut().for_each(|v| *v /= per_crop.len() as f64);
                PredictionDistribution::from_sum(g, &sum, self.config.soft_threshold)
            })
            .collect()
    }
}

/// Predicts every head of `model` from `crops` seeded crops of `img`.
pub fn predict(model: &QmrNet, img: &Image, crops: usize, seed: u64) -> Result<Vec<PredictionDistribution>> {
    let inputs = crop_inputs(img, model.config.side, crops, seed)?;
    model.distributions(&model.crop_probabilities(&inputs)?)
}

/// Predicted parameter values in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub blur_sigma: f64,
    pub snr: f64,
    pub rer: f64,
    pub sharpness_f: f64,
    /// m/px.
    pub gsd: f64,
}

impl QualityVector {
    pub fn get(&self, kind: ModifierKind) -> f64 {
        match kind {
            ModifierKind::Blur => self.blur_sigma,
            ModifierKind::Snr => self.snr,
            ModifierKind::Rer => self.rer,
            ModifierKind::Sharpness => self.sharpness_f,
            ModifierKind::Gsd => self.gsd,
        }
    }
}

/// A quality vector where parameters without a model are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PartialQuality {
    pub blur_sigma: Option<f64>,
    pub snr: Option<f64>,
    pub rer: Option<f64>,
    pub sharpness_f: Option<f64>,
    pub gsd: Option<f64>,
}

impl PartialQuality {
    pub fn get(&self, kind: ModifierKind) -> Option<f64> {
        match kind {
            ModifierKind::Blur => self.blur_sigma,
            ModifierKind::Snr => self.snr,
            ModifierKind::Rer => self.rer,
            ModifierKind::Sharpness => self.sharpness_f,
            ModifierKind::Gsd => self.gsd,
        }
    }

    fn set(&mut self, kind: ModifierKind, v: f64) {
        let slot = match kind {
            ModifierKind::Blur => &mut self.blur_sigma,
            ModifierKind::Snr => &mut self.snr,
            ModifierKind::Rer => &mut self.rer,
            ModifierKind::Sharpness => &mut self.sharpness_f,
            ModifierKind::Gsd => &mut self.gsd,
        };
        *slot = Some(v);
    }

    /// The complete vector, or the first missing parameter.
    pub fn complete(&self) -> Result<QualityVector> {
        let need = |k: ModifierKind| self.get(k).ok_or(Error::MissingModel(k));
        Ok(QualityVector {
            blur_sigma: need(ModifierKind::Blur)?,
            snr: need(ModifierKind::Snr)?,
            rer: need(ModifierKind::Rer)?,
            sharpness_f: need(ModifierKind::Sharpness)?,
            gsd: need(ModifierKind::Gsd)?,
        })
    }
}

/// Argmax values for every parameter some model predicts; the first model with a head wins.
pub fn predict_quality(models: &[&QmrNet], img: &Image, crops: usize, seed: u64) -> Result<PartialQuality> {
    let mut q = PartialQuality::default();
    for m in models {
        for d in predict(m, img, crops, seed)? {
            if q.get(d.kind).is_none() {
                q.set(d.kind, d.value);
            }
        }
    }
    Ok(q)
}

/// Like [`predict_quality`] but every parameter must be covered.
pub fn predict_quality_vector(
    models: &[&QmrNet],
    img: &Image,
    crops: usize,
    seed: u64,
) -> Result<QualityVector> {
    for k in ModifierKind::ALL {
        if !models.iter().any(|m| m.head_index(k).is_some()) {
            return Err(Error::MissingModel(k));
        }
    }
    predict_quality(models, img, crops, seed)?.complete()
}
