use super::model::Grads;
use crate::error::{Error, Result};

/// Stochastic gradient descent with momentum and L2 weight decay.
///
/// `v = momentum * v + g + weight_decay * p; p -= lr * v`
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Grads,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
            return Err(Error::Param(format!(
                "sgd lr {lr}, momentum {momentum}, weight decay {weight_decay}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Applies one update. Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Dimension("gradient layout differs from parameters".into()));
        }
        for (t, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter tensor {t}, element {i} is {}",
                    g[i]
                )));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}
