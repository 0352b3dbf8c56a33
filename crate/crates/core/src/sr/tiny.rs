//! A three-convolution super-resolution net with a bicubic residual, trained
//! with pixel L1 plus an optional quality-regressor term.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_scale, upscale_bicubic};
use crate::error::{Error, Result};
use crate::image::{downsample, extract_crops, load_image, to_grayscale, Image};
use crate::metrics::{psnr, ssim};
use crate::modifiers::ModifierKind;
use crate::nn::{add_grads, scale_grads, Checkpoint, Grads, LayerSpec, Model, ModelSpec, Sgd, Tensor4};
use crate::par::{self, Execution};
use crate::regressor::{combined_sr_loss, QmrLossKind, QmrNet};
use crate::rng::{self, derive_seed};

pub const TINY_SR_FORMAT: &str = "qmrkit-tinysr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrTrainConfig {
    pub scale: usize,
    /// HR training patch side; must be a multiple of `scale`.
    pub patch: usize,
    pub patches_per_image: usize,
    /// Hidden channels of the two inner convolutions.
    pub features: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the quality-regressor term; 0 trains on pixel L1 only.
    pub lambda: f64,
    pub loss_kind: QmrLossKind,
    pub train_fraction: f64,
}

impl Default for SrTrainConfig {
    fn default() -> Self {
        SrTrainConfig {
            scale: 2,
            patch: 64,
            patches_per_image: 24,
            features: 16,
            epochs: 20,
            batch_size: 8,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 0.0,
            lambda: 0.1,
            loss_kind: QmrLossKind::L2,
            train_fraction: 0.8,
        }
    }
}

impl SrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.patch == 0 || !self.patch.is_multiple_of(self.scale) || self.patch / self.scale < 2 {
            return Err(Error::Param(format!(
                "patch {} is not a multiple of scale {}",
                self.patch, self.scale
            )));
        }
        if self.patches_per_image == 0 || self.features == 0 || self.batch_size == 0 {
            return Err(Error::Param("zero patches, features or batch size".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Param(format!("lambda {}", self.lambda)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Param(format!("train fraction {}", self.train_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinySrMeta {
    pub scale: usize,
    pub lambda: f64,
    pub loss_kind: QmrLossKind,
    /// Parameter of the regressor head used for the quality term.
    pub param: Option<ModifierKind>,
    pub seed: u64,
    pub epochs: usize,
}

/// Trained network plus its provenance.
#[derive(Debug, Clone)]
pub struct TinySr {
    model: Model,
    meta: TinySrMeta,
}

fn spec(scale: usize, features: usize, seed: u64) -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::Conv3x3 { in_ch: 1, out_ch: features, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv3x3 { in_ch: features, out_ch: features, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv3x3 { in_ch: features, out_ch: scale * scale, stride: 1 },
            LayerSpec::PixelShuffle { factor: scale },
        ],
        seed,
    }
}

/// Index of the last convolution, zeroed at initialisation so training starts from bicubic.
const LAST_CONV: usize = 4;

impl TinySr {
    /// An untrained net; its output equals bicubic upscaling.
    pub fn new(scale: usize, features: usize, seed: u64) -> Result<Self> {
        check_scale(scale)?;
        let mut model = Model::new(spec(scale, features, seed))?;
        model.zero_layer(LAST_CONV)?;
        Ok(TinySr {
            model,
            meta: TinySrMeta {
                scale,
                lambda: 0.0,
                loss_kind: QmrLossKind::L1,
                param: None,
                seed,
                epochs: 0,
            },
        })
    }

    pub fn scale(&self) -> usize {
        self.meta.scale
    }

    pub fn meta(&self) -> &TinySrMeta {
        &self.meta
    }

    /// `tinysr`, or `tinysr+qmr_<param>` when trained with a quality term.
    pub fn name(&self) -> String {
        match self.meta.param {
            Some(p) if self.meta.lambda > 0.0 => format!("tinysr+qmr_{p}"),
            _ => "tinysr".into(),
        }
    }

    /// Residual plus bicubic base, both `(1, 1, sH, sW)` in `[0, 1]` units.
    fn forward(&self, lr: &Tensor4, base: &Tensor4) -> Result<Tensor4> {
        let mut y = self.model.infer(lr)?;
        y.data_mut().iter_mut().zip(base.data()).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    /// Super-resolves luma; RGB input keeps the bicubic chroma.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let s = self.scale();
        let bic = upscale_bicubic(img, s)?;
        let base_luma = to_grayscale(&bic);
        let lr = Tensor4::from_image(img);
        let base = Tensor4::from_image(&base_luma);
        let y = self.forward(&lr, &base)?;
        let max = img.max_value();
        let delta: Vec<f64> = y
            .data()
            .iter()
            .zip(base.data())
            .map(|(a, b)| (a - b) * max)
            .collect();
        let n = delta.len();
        let data = bic
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + delta[i % n])
            .collect();
        let mut out = Image::from_clamped(bic.width(), bic.height(), bic.channels(), data, max)?;
        out.gsd = bic.gsd;
        Ok(out)
    }
}

pub fn save_tiny_sr(net: &TinySr, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(TINY_SR_FORMAT, vec![net.model.state()], net.meta.clone()).write(path)
}

pub fn load_tiny_sr(path: impl AsRef<Path>) -> Result<TinySr> {
    let ck: Checkpoint<TinySrMeta> = Checkpoint::read(path, TINY_SR_FORMAT)?;
    let [state]: [_; 1] = ck
        .models
        .try_into()
        .map_err(|_| Error::CorruptCheckpoint("expected exactly one model".into()))?;
    let features = match state.spec.layers.first() {
        Some(LayerSpec::Conv3x3 { out_ch, .. }) => *out_ch,
        _ => return Err(Error::CorruptCheckpoint("not a tiny SR spec".into())),
    };
    if state.spec != spec(ck.meta.scale, features, state.spec.seed) {
        return Err(Error::CorruptCheckpoint(format!(
            "layers do not match a x{} tiny SR net",
            ck.meta.scale
        )));
    }
    Ok(TinySr {
        model: Model::from_state(state)?,
        meta: ck.meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrEpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Held-out means over patches.
    pub val_psnr: f64,
    pub val_ssim: f64,
}

impl SrEpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,psnr,ssim";

    pub fn to_csv(logs: &[SrEpochLog]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for l in logs {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.5}\n",
                l.epoch, l.loss, l.val_psnr, l.val_ssim
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SrTrainOutcome {
    pub model: TinySr,
    pub log: Vec<SrEpochLog>,
    /// Indices into the input list.
    pub train_images: Vec<usize>,
    pub val_images: Vec<usize>,
}

struct Patch {
    lr: Tensor4,
    base: Tensor4,
    hr: Tensor4,
    hr_image: Image,
}

fn make_patches(img: &Image, config: &SrTrainConfig, seed: u64) -> Result<Vec<Patch>> {
    let luma = to_grayscale(img);
    if luma.width() < config.patch || luma.height() < config.patch {
        return Err(Error::Size(format!(
            "{}x{} image smaller than SR patch {}",
            luma.width(),
            luma.height(),
            config.patch
        )));
    }
    extract_crops(&luma, config.patch, config.patches_per_image, seed)?
        .into_iter()
        .map(|r| {
            let hr = luma.crop(r)?;
            let lr = downsample(&hr, config.scale)?;
            let base = upscale_bicubic(&lr, config.scale)?;
            Ok(Patch {
                lr: Tensor4::from_image(&lr),
                base: Tensor4::from_image(&base),
                hr: Tensor4::from_image(&hr),
                hr_image: hr,
            })
        })
        .collect()
}

/// Loads `paths` and trains; see [`train_tiny_sr_images`].
pub fn train_tiny_sr(
    paths: &[PathBuf],
    config: &SrTrainConfig,
    quality: Option<(&QmrNet, ModifierKind)>,
    seed: u64,
) -> Result<SrTrainOutcome> {
    let images = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    train_tiny_sr_images(&images, config, quality, seed)
}

/// Trains a [`TinySr`] on HR images with `L1 + lambda * qmr_loss`.
///
/// LR patches come from [`downsample`]. Images are split into train and
/// held-out sets; the log reports held-out PSNR/SSIM after every epoch.
pub fn train_tiny_sr_images(
    images: &[Image],
    config: &SrTrainConfig,
    quality: Option<(&QmrNet, ModifierKind)>,
    seed: u64,
) -> Result<SrTrainOutcome> {
    config.validate()?;
    let head = match (config.lambda > 0.0, quality) {
        (false, _) => None,
        (true, None) => {
            return Err(Error::Param("lambda > 0 needs a quality regressor".into()));
        }
        (true, Some((net, kind))) => Some((
            net,
            net.head_index(kind).ok_or(Error::MissingModel(kind))?,
            kind,
        )),
    };
    if images.len() < 2 {
        return Err(Error::Empty(format!(
            "{} HR image(s); a train/held-out split needs two",
            images.len()
        )));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[0x5eed]));
    let n_train = ((config.train_fraction * images.len() as f64).round() as usize).clamp(1, images.len() - 1);
    let mut val_images = order.split_off(n_train);
    let mut train_images = order;
    train_images.sort_unstable();
    val_images.sort_unstable();

    let patches = par::map_range(Execution::Parallel, images.len(), |i| {
        make_patches(&images[i], config, derive_seed(seed, &[i as u64]))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let train: Vec<&Patch> = train_images.iter().flat_map(|&i| &patches[i]).collect();
    let val: Vec<&Patch> = val_images.iter().flat_map(|&i| &patches[i]).collect();

    let mut net = TinySr::new(config.scale, config.features, seed)?;
    net.meta.lambda = config.lambda;
    net.meta.loss_kind = config.loss_kind;
    net.meta.param = head.map(|h| h.2);
    let quality = head.map(|(n, h, _)| (n, h));
    let mut opt = Sgd::new(config.lr, config.momentum, config.weight_decay)?;

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut rng::stream(seed, &[0xe9, epoch as u64]));
        let mut total = 0.0;
        for (b, chunk) in idx.chunks(config.batch_size).enumerate() {
            let results = par::map_slice(Execution::Parallel, chunk, |&i| {
                let p = train[i];
                let tape = net.model.forward_tape(&p.lr)?;
                let mut sr = tape.output().clone();
                sr.data_mut().iter_mut().zip(p.base.data()).for_each(|(a, b)| *a += b);
                let (loss, g) = combined_sr_loss(quality, &p.hr, &sr, config.lambda, config.loss_kind)?;
                let mut grads = net.model.zero_grads();
                net.model.backward_tape(&tape, &g, &mut grads)?;
                Ok::<(f64, Grads), Error>((loss, grads))
            });
            let mut grads = net.model.zero_grads();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                add_grads(&mut grads, &g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "SR loss at epoch {epoch}, batch {b} (lr {})",
                    config.lr
                )));
            }
            total += batch_loss;
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            opt.step(net.model.params_mut(), &grads)?;
        }
        let scores = par::map_slice(Execution::Parallel, &val, |p| {
            let sr = net.forward(&p.lr, &p.base)?.to_image(0, p.hr_image.max_value())?;
            Ok::<_, Error>((psnr(&p.hr_image, &sr)?, ssim(&p.hr_image, &sr)?))
        });
        let (mut sp, mut ss) = (0.0, 0.0);
        for r in scores {
            let (p, s) = r?;
            sp += p;
            ss += s;
        }
        let entry = SrEpochLog {
            epoch,
            loss: total / train.len() as f64,
            val_psnr: sp / val.len() as f64,
            val_ssim: ss / val.len() as f64,
        };
        log::info!(
            "sr epoch {epoch}: loss {:.5} psnr {:.3} ssim {:.4}",
            entry.loss,
            entry.val_psnr,
            entry.val_ssim
        );
        log.push(entry);
    }
    net.meta.epochs = config.epochs;
    Ok(SrTrainOutcome {
        model: net,
        log,
        train_images,
        val_images,
    })
}
