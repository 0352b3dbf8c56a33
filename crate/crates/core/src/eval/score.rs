//! Score: a weighted mean of per-metric normalised distances to an objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modifiers::ModifierKind;
use crate::regressor::QualityVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConvention {
    pub range: f64,
    pub objective: f64,
    pub weight: f64,
}

/// Range, objective and weight for each of the five metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConvention {
    pub blur: MetricConvention,
    pub snr: MetricConvention,
    pub rer: MetricConvention,
    pub sharpness: MetricConvention,
    pub gsd: MetricConvention,
}

impl Default for ScoreConvention {
    fn default() -> Self {
        let m = |range, objective| MetricConvention {
            range,
            objective,
            weight: 0.2,
        };
        ScoreConvention {
            blur: m(2.5, 0.0),
            snr: m(15.0, 30.0),
            rer: m(0.40, 0.55),
            sharpness: m(9.0, 1.0),
            gsd: m(0.30, 0.30),
        }
    }
}

impl ScoreConvention {
    pub fn entry(&self, kind: ModifierKind) -> &MetricConvention {
        match kind {
            ModifierKind::Blur => &self.blur,
            ModifierKind::Snr => &self.snr,
            ModifierKind::Rer => &self.rer,
            ModifierKind::Sharpness => &self.sharpness,
            ModifierKind::Gsd => &self.gsd,
        }
    }

    /// Ranges must be positive and weights non-negative with unit sum.
    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for kind in ModifierKind::ALL {
            let e = self.entry(kind);
            if !(e.range > 0.0 && e.range.is_finite()) {
                return Err(Error::Param(format!("{kind} score range {}", e.range)));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) || !e.objective.is_finite() {
                return Err(Error::Param(format!("{kind} score weight {}", e.weight)));
            }
            sum += e.weight;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!("score weights sum to {sum}")));
        }
        Ok(())
    }
}

/// `(range - |objective - value|) / range`, clamped to `[0, 1]`.
pub fn metric_score(value: f64, c: &MetricConvention) -> f64 {
    ((c.range - (c.objective - value).abs()) / c.range).clamp(0.0, 1.0)
}

pub fn aggregate_score(qv: &QualityVector, convention: &ScoreConvention) -> Result<f64> {
    convention.validate()?;
    Ok(ModifierKind::ALL
        .iter()
        .map(|&k| {
            let e = convention.entry(k);
            e.weight * metric_score(qv.get(k), e)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qv(blur: f64, snr: f64, rer: f64, f: f64, gsd: f64) -> QualityVector {
        QualityVector {
            blur_sigma: blur,
            snr,
            rer,
            sharpness_f: f,
            gsd,
        }
    }

    #[test]
    fn metric_score_edges() {
        let c = ScoreConvention::default();
        assert_eq!(metric_score(30.0, &c.snr), 1.0);
        assert_eq!(metric_score(15.0, &c.snr), 0.0);
        assert!((metric_score(1.0, &c.blur) - 0.6).abs() < 1e-15);
        assert_eq!(metric_score(-100.0, &c.blur), 0.0);
    }

    #[test]
    fn optimum_and_hand_arithmetic() {
        let c = ScoreConvention::default();
        assert!((aggregate_score(&qv(0.0, 30.0, 0.55, 1.0, 0.30), &c).unwrap() - 1.0).abs() < 1e-12);
        // (0.6 + 1 + 0.9125 + 1 + 1) / 5
        let s = aggregate_score(&qv(1.0, 30.0, 0.515, 1.0, 0.30), &c).unwrap();
        assert!((s - 0.9025).abs() < 1e-12);
    }

    #[test]
    fn invalid_conventions() {
        let mut c = ScoreConvention::default();
        c.blur.weight = 0.5;
        assert!(c.validate().is_err());
        let mut c = ScoreConvention::default();
        c.rer.range = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn worsening_never_raises_score() {
        let c = ScoreConvention::default();
        let base = qv(1.2, 25.0, 0.45, 2.0, 0.40);
        let s0 = aggregate_score(&base, &c).unwrap();
        for (i, step) in [0.1, -1.0, -0.02, 1.0, 0.03].iter().enumerate() {
            let mut q = base;
            match i {
                0 => q.blur_sigma += step,
                1 => q.snr += step,
                2 => q.rer += step,
                3 => q.sharpness_f += step,
                _ => q.gsd += step,
            }
            assert!(aggregate_score(&q, &c).unwrap() <= s0);
        }
    }
}
