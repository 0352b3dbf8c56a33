//! Vector losses returning the mean loss and its gradient.

use crate::error::{Error, Result};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} entries, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss over zero entries".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            (-t / p + (1.0 - t) / (1.0 - p)) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean absolute error; the subgradient at zero is zero.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean squared error.
pub fn l2_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
