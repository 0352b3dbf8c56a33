//! Quality-metric loss between head outputs of a reference and a test batch.

use serde::{Deserialize, Serialize};

use super::QmrNet;
use crate::error::{Error, Result};
use crate::nn::{bce_loss, l1_loss, l2_loss, Tensor4};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QmrLossKind {
    L1,
    L2,
    /// Cross-entropy of the test probabilities against the reference probabilities.
    Bce,
}

impl std::str::FromStr for QmrLossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(QmrLossKind::L1),
            "l2" => Ok(QmrLossKind::L2),
            "bce" => Ok(QmrLossKind::Bce),
            o => Err(Error::Param(format!("unknown loss kind '{o}' (l1, l2, bce)"))),
        }
    }
}

/// Loss between head `head` outputs for `hr` and `sr`, with its gradient w.r.t. `sr`.
///
/// The network is frozen and `hr` is a constant target. The loss is averaged over
/// the batch.
pub fn qmr_loss(
    model: &QmrNet,
    head: usize,
    hr: &Tensor4,
    sr: &Tensor4,
    kind: QmrLossKind,
) -> Result<(f64, Tensor4)> {
    if hr.shape() != sr.shape() {
        return Err(Error::Dimension(format!(
            "reference {:?} vs test {:?}",
            hr.shape(),
            sr.shape()
        )));
    }
    model.check_head(head)?;
    let n = sr.batch();
    if n == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    let enc = &model.encoders[model.encoder_of(head)];
    let hm = &model.heads[head];
    let per = par::map_range(Execution::Parallel, n, |i| {
        let target = model.probabilities(head, &hr.sample(i))?;
        let stretched = super::stretch(&sr.sample(i));
        let etape = enc.forward_tape(stretched.output())?;
        let htape = hm.forward_tape(etape.output())?;
        let p = htape.output();
        let (loss, g) = match kind {
            QmrLossKind::L1 => l1_loss(p.data(), target.data())?,
            QmrLossKind::L2 => l2_loss(p.data(), target.data())?,
            QmrLossKind::Bce => bce_loss(p.data(), target.data())?,
        };
        let mut scratch = hm.zero_grads();
        let dfeat = hm.backward_tape(&htape, &Tensor4::new(p.shape(), g)?, &mut scratch)?;
        let mut scratch = enc.zero_grads();
        let dx = enc.backward_tape(&etape, &dfeat, &mut scratch)?;
        Ok::<_, Error>((loss, stretched.backward(&dx)))
    });
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(sr.data().len());
    for r in per {
        let (l, dx) = r?;
        total += l;
        grad.extend(dx.into_data().into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor4::new(sr.shape(), grad)?))
}

/// Mean absolute pixel error plus `lambda` times [`qmr_loss`].
///
/// With `lambda == 0` the quality term is skipped entirely and `quality` may be `None`.
pub fn combined_sr_loss(
    quality: Option<(&QmrNet, usize)>,
    hr: &Tensor4,
    sr: &Tensor4,
    lambda: f64,
    kind: QmrLossKind,
) -> Result<(f64, Tensor4)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Param(format!("quality loss weight {lambda}")));
    }
    if hr.shape() != sr.shape() {
        return Err(Error::Dimension(format!(
            "reference {:?} vs test {:?}",
            hr.shape(),
            sr.shape()
        )));
    }
    let (content, g) = l1_loss(sr.data(), hr.data())?;
    let mut grad = Tensor4::new(sr.shape(), g)?;
    if lambda == 0.0 {
        return Ok((content, grad));
    }
    let (model, head) =
        quality.ok_or_else(|| Error::Param("quality loss weight > 0 without a regressor".into()))?;
    let (q, qg) = qmr_loss(model, head, hr, sr, kind)?;
    grad.data_mut()
        .iter_mut()
        .zip(qg.data())
        .for_each(|(a, b)| *a += lambda * b);
    Ok((content + lambda * q, grad))
}
