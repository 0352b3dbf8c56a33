//! Training loop with an image-level train/validation split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{QmrNet, RegressorConfig};
use crate::error::{Error, Result};
use crate::eval::{med_r, recall_at_k, EvalPair, EvalPairs};
use crate::image::load_image;
use crate::modifiers::DatasetManifest;
use crate::nn::{add_grads, bce_loss, scale_grads, Grads, Sgd, Tensor4};
use crate::par::{self, Execution};
use crate::rng;

/// One training crop.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `(1, 1, R, R)` luma in `[0, 1]`.
    pub input: Tensor4,
    pub head: usize,
    pub class: usize,
    /// Source image the crop was cut from; the split never separates crops of one source.
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss.
    pub loss: f64,
    /// Validation metrics, averaged over heads.
    pub med_r: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,medR,R@1,R@5";

    pub fn to_csv(logs: &[EpochLog]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for l in logs {
            out.push_str(&format!(
                "{},{:.6},{:.3},{:.3},{:.3}\n",
                l.epoch, l.loss, l.med_r, l.r_at_1, l.r_at_5
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation medR (ties broken by R@1).
    pub model: QmrNet,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_sources: Vec<String>,
    pub val_sources: Vec<String>,
}

/// Loads every manifest crop, routing each manifest to the head of its grid.
pub fn load_samples(manifests: &[DatasetManifest], config: &RegressorConfig) -> Result<Vec<Sample>> {
    if manifests.is_empty() {
        return Err(Error::Empty("no dataset manifests".into()));
    }
    let mut samples = Vec::new();
    for m in manifests {
        let head = config
            .grids
            .iter()
            .position(|g| g.kind() == m.grid().kind())
            .ok_or_else(|| Error::GridMismatch {
                expected: config.grids.iter().map(|g| g.identity()).collect::<Vec<_>>().join(","),
                found: m.grid().identity(),
            })?;
        if config.grids[head] != *m.grid() {
            return Err(Error::GridMismatch {
                expected: config.grids[head].identity(),
                found: m.grid().identity(),
            });
        }
        if m.header.side != config.side {
            return Err(Error::Size(format!(
                "dataset crops are {} px, regressor input is {}",
                m.header.side, config.side
            )));
        }
        let loaded = par::map_slice(Execution::Parallel, &m.entries, |e| {
            let img = load_image(m.output_path(e))?;
            Ok::<_, Error>(Sample {
                input: Tensor4::from_image(&img),
                head,
                class: e.class,
                source: e.source.clone(),
            })
        });
        for s in loaded {
            samples.push(s?);
        }
    }
    Ok(samples)
}

/// Trains on the crops of `manifests`; see [`train_samples`].
pub fn train(
    manifests: &[DatasetManifest],
    config: &RegressorConfig,
    train_fraction: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    let samples = load_samples(manifests, config)?;
    train_samples(&samples, config, train_fraction, seed)
}

fn split_sources(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Param(format!("train fraction {fraction}")));
    }
    let mut sources: Vec<String> = samples
        .iter()
        .map(|s| s.source.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if sources.len() < 2 {
        return Err(Error::Empty(format!(
            "{} source image(s); a train/validation split needs two",
            sources.len()
        )));
    }
    sources.shuffle(&mut rng::stream(seed, &[0x5eed]));
    let n_train = ((fraction * sources.len() as f64).round() as usize).clamp(1, sources.len() - 1);
    let val = sources.split_off(n_train);
    sources.sort();
    let mut val = val;
    val.sort();
    Ok((sources, val))
}

/// Loss and parameter gradients of one sample: `(loss, encoder grads, head grads)`.
fn sample_gradient(net: &QmrNet, s: &Sample) -> Result<(f64, Grads, Grads)> {
    let enc = &net.encoders[net.encoder_of(s.head)];
    let head = &net.heads[s.head];
    let etape = enc.forward_tape(super::stretch(&s.input).output())?;
    let htape = head.forward_tape(etape.output())?;
    let p = htape.output();
    let mut target = vec![0.0; p.data().len()];
    target[s.class] = 1.0;
    let (loss, g) = bce_loss(p.data(), &target)?;
    let mut hg = head.zero_grads();
    let dfeat = head.backward_tape(&htape, &Tensor4::new(p.shape(), g)?, &mut hg)?;
    let mut eg = enc.zero_grads();
    enc.backward_tape(&etape, &dfeat, &mut eg)?;
    Ok((loss, eg, hg))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// medR, R@1, R@5 over validation groups, averaged over the heads present.
///
/// Crops of one (source, class) pair form a group whose probabilities are averaged,
/// mirroring crop-averaged prediction.
fn validate(net: &QmrNet, samples: &[&Sample]) -> Result<(f64, f64, f64)> {
    let probs = par::map_slice(Execution::Parallel, samples, |s| {
        net.probabilities(s.head, &s.input).map(Tensor4::into_data)
    });
    let mut groups: BTreeMap<(usize, &str, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for (s, p) in samples.iter().zip(probs) {
        let p = p?;
        let e = groups
            .entry((s.head, s.source.as_str(), s.class))
            .or_insert_with(|| (vec![0.0; p.len()], 0));
        e.0.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    let mut per_head: BTreeMap<usize, Vec<EvalPair>> = BTreeMap::new();
    for ((head, _, class), (sum, count)) in groups {
        let probs: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
        per_head.entry(head).or_default().push(EvalPair {
            target: class,
            predicted: argmax(&probs),
            probs,
        });
    }
    let (mut m, mut r1, mut r5) = (0.0, 0.0, 0.0);
    for (head, pairs) in &per_head {
        let ep = EvalPairs::new(net.grids()[*head].n(), pairs.clone())?;
        m += med_r(&ep)?;
        r1 += recall_at_k(&ep, 1)?;
        r5 += recall_at_k(&ep, 5)?;
    }
    let k = per_head.len() as f64;
    Ok((m / k, r1 / k, r5 / k))
}

/// Trains a freshly initialised network with SGD on one-hot BCE targets.
///
/// Sources are shuffled with `seed` and the first `train_fraction` of them train;
/// the rest validate. Per-sample gradients are computed in parallel and summed in
/// sample order, so the result does not depend on the thread count.
pub fn train_samples(
    samples: &[Sample],
    config: &RegressorConfig,
    train_fraction: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    for (i, s) in samples.iter().enumerate() {
        if s.head >= config.grids.len() || s.class >= config.grids[s.head].n() {
            return Err(Error::Param(format!(
                "sample {i}: head {} class {} outside the configured grids",
                s.head, s.class
            )));
        }
        if s.input.shape() != [1, 1, config.side, config.side] {
            return Err(Error::Dimension(format!(
                "sample {i}: input {:?}, expected [1, 1, {}, {}]",
                s.input.shape(),
                config.side,
                config.side
            )));
        }
    }
    let (train_sources, val_sources) = split_sources(samples, train_fraction, seed)?;
    let is_train: BTreeSet<&str> = train_sources.iter().map(String::as_str).collect();
    let train_set: Vec<&Sample> = samples.iter().filter(|s| is_train.contains(s.source.as_str())).collect();
    let val_set: Vec<&Sample> = samples.iter().filter(|s| !is_train.contains(s.source.as_str())).collect();
    log::info!(
        "training on {} crops from {} sources, validating on {} crops from {} sources",
        train_set.len(),
        train_sources.len(),
        val_set.len(),
        val_sources.len()
    );

    let mut net = QmrNet::new(config.clone(), seed)?;
    let sgd = || Sgd::new(config.lr, config.momentum, config.weight_decay);
    let mut enc_opt = (0..net.encoders.len()).map(|_| sgd()).collect::<Result<Vec<_>>>()?;
    let mut head_opt = (0..net.heads.len()).map(|_| sgd()).collect::<Result<Vec<_>>>()?;

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, QmrNet)> = None;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[0xe9, epoch as u64]));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let results = par::map_slice(Execution::Parallel, &batch, |s| sample_gradient(&net, s));
            let mut eg: Vec<Grads> = net.encoders.iter().map(|m| m.zero_grads()).collect();
            let mut hg: Vec<Grads> = net.heads.iter().map(|m| m.zero_grads()).collect();
            let mut batch_loss = 0.0;
            for (s, r) in batch.iter().zip(results) {
                let (loss, e, h) = r?;
                batch_loss += loss;
                add_grads(&mut eg[net.encoder_of(s.head)], &e);
                add_grads(&mut hg[s.head], &h);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b} (lr {})",
                    config.lr
                )));
            }
            total += batch_loss;
            let k = 1.0 / batch.len() as f64;
            for (i, g) in eg.iter_mut().enumerate() {
                scale_grads(g, k);
                enc_opt[i].step(net.encoders[i].params_mut(), g)?;
            }
            for (i, g) in hg.iter_mut().enumerate() {
                scale_grads(g, k);
                head_opt[i].step(net.heads[i].params_mut(), g)?;
            }
        }
        let (m, r1, r5) = validate(&net, &val_set)?;
        let entry = EpochLog {
            epoch,
            loss: total / train_set.len().max(1) as f64,
            med_r: m,
            r_at_1: r1,
            r_at_5: r5,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} medR {m:.3} R@1 {r1:.1} R@5 {r5:.1}",
            entry.loss
        );
        log.push(entry);
        let better = match &best {
            None => true,
            Some((bm, br, _)) => m < *bm || (m == *bm && r1 > *br),
        };
        if better {
            let mut snapshot = net.clone();
            snapshot.meta.epoch = epoch;
            best = Some((m, r1, snapshot));
        }
    }
    let model = match best {
        Some((_, _, model)) => model,
        None => net,
    };
    Ok(TrainOutcome {
        best_epoch: model.meta.epoch,
        model,
        log,
        train_sources,
        val_sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modifiers::{apply_blur, ModifierKind, ParamGrid};
    use crate::regressor::Topology;
    use crate::synth::textured_image;

    fn toy(images: usize) -> (Vec<Sample>, RegressorConfig) {
        let grid = ParamGrid::new(ModifierKind::Blur, 2, 1.0, 2.5).unwrap();
        let mut samples = Vec::new();
        for i in 0..images {
            let img = textured_image(16, 16, i as u64);
            for (c, &v) in grid.values().iter().enumerate() {
                samples.push(Sample {
                    input: Tensor4::from_image(&apply_blur(&img, v).unwrap()),
                    head: 0,
                    class: c,
                    source: format!("img{i}"),
                });
            }
        }
        let config = RegressorConfig {
            grids: vec![grid],
            side: 16,
            channels: [4, 4, 8],
            epochs: 3,
            batch_size: 4,
            lr: 0.05,
            topology: Topology::SingleHead,
            ..RegressorConfig::default()
        };
        (samples, config)
    }

    #[test]
    fn split_is_by_source_and_seeded() {
        let (samples, _) = toy(10);
        let (t, v) = split_sources(&samples, 0.8, 3).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        assert!(t.iter().all(|s| !v.contains(s)));
        assert_eq!(split_sources(&samples, 0.8, 3).unwrap(), (t, v));
        assert!(split_sources(&samples[..2], 0.8, 3).is_err());
        assert!(split_sources(&samples, 1.0, 3).is_err());
    }

    #[test]
    fn same_seed_same_log() {
        let (samples, config) = toy(5);
        let a = train_samples(&samples, &config, 0.8, 9).unwrap();
        let b = train_samples(&samples, &config, 0.8, 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
        assert!(a.log.iter().all(|l| l.loss.is_finite()));
        assert!((1..=3).contains(&a.best_epoch));
    }

    #[test]
    fn rejects_bad_samples() {
        let (mut samples, config) = toy(3);
        samples[0].class = 7;
        assert!(train_samples(&samples, &config, 0.5, 0).is_err());
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        let (samples, config) = toy(1);
        let net = QmrNet::new(config, 2).unwrap();
        let s = &samples[1];
        let (_, eg, hg) = sample_gradient(&net, s).unwrap();
        let h = 1e-5;
        for (which, grads) in [(0usize, &eg), (1, &hg)] {
            for t in 0..grads.len() {
                for i in (0..grads[t].len()).step_by(7) {
                    let shifted = |d: f64| {
                        let mut n = net.clone();
                        let m = if which == 0 { &mut n.encoders[0] } else { &mut n.heads[0] };
                        m.params_mut()[t][i] += d;
                        sample_gradient(&n, s).unwrap().0
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let an = grads[t][i];
                    assert!(
                        (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                        "model {which} tensor {t} index {i}: {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn csv_log() {
        let l = EpochLog { epoch: 1, loss: 0.5, med_r: 1.0, r_at_1: 50.0, r_at_5: 100.0 };
        assert_eq!(EpochLog::to_csv(&[l]), "epoch,loss,medR,R@1,R@5\n1,0.500000,1.000,50.000,100.000\n");
    }
}
