//! Interval-classification quality regressor: a small convolutional encoder
//! followed by one softmax head per parameter grid.

mod checkpoint;
mod loss;
mod predict;
mod train;

pub use checkpoint::{load_model, save_model, TrainingMeta, REGRESSOR_FORMAT};
pub use loss::{combined_sr_loss, qmr_loss, QmrLossKind};
pub use predict::{
    crop_inputs,
    predict, predict_quality, predict_quality_vector, PartialQuality, PredictionDistribution,
    QualityVector,
};
pub use train::{load_samples, train, train_samples, EpochLog, Sample, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modifiers::{ModifierKind, ParamGrid};
use crate::nn::{LayerSpec, Model, ModelSpec, Tensor4};
use crate::rng::derive_seed;

/// How heads share encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// One grid, one encoder, one head.
    SingleHead,
    /// One shared encoder, one head per grid.
    MultiHead,
    /// One encoder and head per grid.
    MultiBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub grids: Vec<ParamGrid>,
    /// Input crop side R.
    pub side: usize,
    /// Crops per image C at prediction time.
    pub crops: usize,
    pub topology: Topology,
    /// Output channels of the three encoder convolutions.
    pub channels: [usize; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Probability at or above which a class enters the predicted label set.
    pub soft_threshold: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            grids: vec![ModifierKind::Blur.default_grid()],
            side: 64,
            crops: 8,
            topology: Topology::SingleHead,
            channels: [16, 32, 64],
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            momentum: 0.9,
            soft_threshold: 0.3,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::Param("regressor needs at least one grid".into()));
        }
        if self.topology == Topology::SingleHead && self.grids.len() != 1 {
            return Err(Error::Param(format!(
                "single-head topology with {} grids",
                self.grids.len()
            )));
        }
        let mut kinds: Vec<ModifierKind> = self.grids.iter().map(ParamGrid::kind).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.grids.len() {
            return Err(Error::Param("duplicate parameter grids".into()));
        }
        if !(self.soft_threshold > 0.0 && self.soft_threshold < 1.0) {
            return Err(Error::Param(format!("soft threshold {}", self.soft_threshold)));
        }
        if self.side < 4 || self.crops == 0 || self.batch_size == 0 {
            return Err(Error::Param(format!(
                "side {}, crops {}, batch size {}",
                self.side, self.crops, self.batch_size
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Param("zero encoder channels".into()));
        }
        Ok(())
    }

    fn encoder_count(&self) -> usize {
        match self.topology {
            Topology::MultiBranch => self.grids.len(),
            _ => 1,
        }
    }
}

fn encoder_spec(channels: [usize; 3], seed: u64) -> ModelSpec {
    let [c1, c2, c3] = channels;
    ModelSpec {
        layers: vec![
            LayerSpec::Conv3x3 { in_ch: 1, out_ch: c1, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Conv3x3 { in_ch: c1, out_ch: c2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Conv3x3 { in_ch: c2, out_ch: c3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
        ],
        seed,
    }
}

fn head_spec(features: usize, n: usize, seed: u64) -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::Linear { in_features: features, out_features: n },
            LayerSpec::Softmax,
        ],
        seed,
    }
}

/// Per-sample extremes recorded by [`stretch`].
#[derive(Debug, Clone)]
pub(crate) struct StretchCache {
    /// `(argmin, argmax, range)` within each sample.
    extremes: Vec<(usize, usize, f64)>,
    output: Tensor4,
}

/// Samples whose value range is below this map to zero.
const FLAT_RANGE: f64 = 1e-12;

/// Min-max stretches every sample to `[0, 1]`, removing brightness and contrast.
pub(crate) fn stretch(x: &Tensor4) -> StretchCache {
    let mut out = x.clone();
    let len = x.sample_len();
    let mut extremes = Vec::with_capacity(x.batch());
    for s in out.data_mut().chunks_mut(len.max(1)) {
        let (mut lo, mut hi) = (0, 0);
        for (i, &v) in s.iter().enumerate() {
            if v < s[lo] {
                lo = i;
            }
            if v > s[hi] {
                hi = i;
            }
        }
        let (min, range) = (s[lo], s[hi] - s[lo]);
        if range < FLAT_RANGE {
            s.fill(0.0);
        } else {
            s.iter_mut().for_each(|v| *v = (*v - min) / range);
        }
        extremes.push((lo, hi, range));
    }
    StretchCache {
        extremes,
        output: out,
    }
}

impl StretchCache {
    pub(crate) fn output(&self) -> &Tensor4 {
        &self.output
    }

    /// Gradient w.r.t. the unstretched input.
    pub(crate) fn backward(&self, dy: &Tensor4) -> Tensor4 {
        let len = dy.sample_len();
        let mut dx = Tensor4::zeros(dy.shape());
        for (n, &(lo, hi, range)) in self.extremes.iter().enumerate() {
            if range < FLAT_RANGE {
                continue;
            }
            let g = dy.sample_slice(n);
            let y = self.output.sample_slice(n);
            let sum: f64 = g.iter().sum();
            let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            let out = &mut dx.data_mut()[n * len..(n + 1) * len];
            out.iter_mut().zip(g).for_each(|(o, gi)| *o = gi / range);
            out[lo] += (dot - sum) / range;
            out[hi] -= dot / range;
        }
        dx
    }
}

/// Encoders and heads of a configured regressor.
///
/// Every input sample is min-max stretched to `[0, 1]` before the encoder, so
/// predictions depend on image structure rather than brightness or contrast.
#[derive(Debug, Clone)]
pub struct QmrNet {
    config: RegressorConfig,
    encoders: Vec<Model>,
    heads: Vec<Model>,
    meta: TrainingMeta,
}

impl QmrNet {
    /// Freshly initialised network; weights depend only on `seed`.
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoders = (0..config.encoder_count())
            .map(|i| Model::new(encoder_spec(config.channels, derive_seed(seed, &[1, i as u64]))))
            .collect::<Result<Vec<_>>>()?;
        let heads = config
            .grids
            .iter()
            .enumerate()
            .map(|(i, g)| {
                Model::new(head_spec(config.channels[2], g.n(), derive_seed(seed, &[2, i as u64])))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QmrNet {
            config,
            encoders,
            heads,
            meta: TrainingMeta { seed, epoch: 0 },
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn grids(&self) -> &[ParamGrid] {
        &self.config.grids
    }

    pub fn heads(&self) -> usize {
        self.heads.len()
    }

    pub fn encoders(&self) -> usize {
        self.encoders.len()
    }

    /// Index of the head predicting `kind`.
    pub fn head_index(&self, kind: ModifierKind) -> Option<usize> {
        self.config.grids.iter().position(|g| g.kind() == kind)
    }

    fn encoder_of(&self, head: usize) -> usize {
        if self.encoders.len() == 1 {
            0
        } else {
            head
        }
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads.len() {
            return Err(Error::Param(format!(
                "head {head} of a {}-head regressor",
                self.heads.len()
            )));
        }
        Ok(())
    }

    /// Class probabilities of `head`, shape `(n, N, 1, 1)`.
    pub fn probabilities(&self, head: usize, x: &Tensor4) -> Result<Tensor4> {
        self.check_head(head)?;
        let feats = self.encoders[self.encoder_of(head)].infer(stretch(x).output())?;
        self.heads[head].infer(&feats)
    }

    /// Probabilities for every head, sharing encoder passes where the topology allows.
    pub fn all_probabilities(&self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        let x = stretch(x);
        let feats = self
            .encoders
            .iter()
            .map(|e| e.infer(x.output()))
            .collect::<Result<Vec<_>>>()?;
        (0..self.heads.len())
            .map(|h| self.heads[h].infer(&feats[self.encoder_of(h)]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(topology: Topology, kinds: &[ModifierKind]) -> RegressorConfig {
        RegressorConfig {
            grids: kinds.iter().map(|k| k.default_grid()).collect(),
            topology,
            channels: [4, 4, 8],
            side: 16,
            ..RegressorConfig::default()
        }
    }

    #[test]
    fn topology_shapes() {
        let kinds = [ModifierKind::Blur, ModifierKind::Snr, ModifierKind::Gsd];
        let mh = QmrNet::new(cfg(Topology::MultiHead, &kinds), 1).unwrap();
        assert_eq!((mh.encoders(), mh.heads()), (1, 3));
        let mb = QmrNet::new(cfg(Topology::MultiBranch, &kinds), 1).unwrap();
        assert_eq!((mb.encoders(), mb.heads()), (3, 3));
        let x = Tensor4::zeros([2, 1, 16, 16]);
        for (p, g) in mb.all_probabilities(&x).unwrap().iter().zip(mb.grids()) {
            assert_eq!(p.shape(), [2, g.n(), 1, 1]);
        }
        assert_eq!(mh.head_index(ModifierKind::Snr), Some(1));
        assert_eq!(mh.head_index(ModifierKind::Rer), None);
    }

    #[test]
    fn stretch_range_and_gradient() {
        let x = Tensor4::new([2, 1, 2, 3], vec![0.2, 0.5, 0.9, 0.3, 0.4, 0.1, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3])
            .unwrap();
        let c = stretch(&x);
        assert_eq!(c.output().sample_slice(0)[2], 1.0);
        assert_eq!(c.output().sample_slice(0)[5], 0.0);
        assert!(c.output().sample_slice(1).iter().all(|&v| v == 0.0));
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = |x: &Tensor4| -> f64 { stretch(x).output().data().iter().zip(&w).map(|(a, b)| a * b).sum() };
        let dx = c.backward(&Tensor4::new([2, 1, 2, 3], w.clone()).unwrap());
        for i in 0..6 {
            let mut up = x.clone();
            up.data_mut()[i] += 1e-6;
            let mut dn = x.clone();
            dn.data_mut()[i] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - dx.data()[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx.data()[i]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(QmrNet::new(cfg(Topology::SingleHead, &[ModifierKind::Blur, ModifierKind::Snr]), 0)
            .is_err());
        assert!(QmrNet::new(cfg(Topology::MultiHead, &[ModifierKind::Blur, ModifierKind::Blur]), 0)
            .is_err());
        let mut c = cfg(Topology::SingleHead, &[ModifierKind::Blur]);
        c.soft_threshold = 1.0;
        assert!(c.validate().is_err());
        c.soft_threshold = 0.0;
        assert!(c.validate().is_err());
    }
}
