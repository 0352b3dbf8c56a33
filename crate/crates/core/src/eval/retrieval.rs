//! Retrieval-style metrics over (target, prediction) interval pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated sample: target and predicted class plus the predicted distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub target: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

/// Pairs over a common grid of `n` classes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalPairs {
    pub n: usize,
    pub pairs: Vec<EvalPair>,
}

impl EvalPairs {
    pub fn new(n: usize, pairs: Vec<EvalPair>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if p.target >= n || p.predicted >= n {
                return Err(Error::Param(format!(
                    "pair {i}: class {} / {} outside 0..{n}",
                    p.target, p.predicted
                )));
            }
            if !p.probs.is_empty() && p.probs.len() != n {
                return Err(Error::Dimension(format!(
                    "pair {i}: {} probabilities for {n} classes",
                    p.probs.len()
                )));
            }
        }
        Ok(EvalPairs { n, pairs })
    }

    fn non_empty(&self) -> Result<()> {
        if self.pairs.is_empty() {
            Err(Error::Empty("no evaluation pairs".into()))
        } else {
            Ok(())
        }
    }

    fn distances(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.target.abs_diff(p.predicted))
    }
}

/// Median absolute interval distance; an even count averages the two central values.
pub fn med_r(pairs: &EvalPairs) -> Result<f64> {
    pairs.non_empty()?;
    let mut d: Vec<usize> = pairs.distances().collect();
    d.sort_unstable();
    let n = d.len();
    Ok(if n % 2 == 1 {
        d[n / 2] as f64
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2]) as f64
    })
}

/// Percentage of pairs whose interval distance is below `k` (R@1 is exact match).
pub fn recall_at_k(pairs: &EvalPairs, k: usize) -> Result<f64> {
    pairs.non_empty()?;
    if k == 0 {
        return Err(Error::Param("recall@k needs k >= 1".into()));
    }
    let hits = pairs.distances().filter(|&d| d < k).count();
    Ok(100.0 * hits as f64 / pairs.pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f_score: f64,
}

/// Precision, recall, accuracy and F-score of the thresholded label sets,
/// restricted to the classes within distance `< k` of each target.
///
/// Inside the window of a pair, class `j` is a true label when `j == target`
/// and a predicted label when `probs[j] >= threshold`.
pub fn prf_at_k(pairs: &EvalPairs, k: usize, threshold: f64) -> Result<Prf> {
    pairs.non_empty()?;
    if k == 0 {
        return Err(Error::Param("prf@k needs k >= 1".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for p in &pairs.pairs {
        if p.probs.len() != pairs.n {
            return Err(Error::Dimension("prf@k needs probability vectors".into()));
        }
        let lo = p.target.saturating_sub(k - 1);
        let hi = (p.target + k - 1).min(pairs.n - 1);
        for j in lo..=hi {
            match (j == p.target, p.probs[j] >= threshold) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        f_score,
    })
}

/// One-vs-rest ROC AUC averaged over the classes present among the targets.
///
/// Ties in the scores count one half (Mann-Whitney with mid-ranks).
pub fn macro_auc(pairs: &EvalPairs) -> Result<f64> {
    pairs.non_empty()?;
    if pairs.pairs.iter().any(|p| p.probs.len() != pairs.n) {
        return Err(Error::Dimension("AUC needs probability vectors".into()));
    }
    let mut present: Vec<usize> = pairs.pairs.iter().map(|p| p.target).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::UndefinedAuc);
    }
    let m = pairs.pairs.len();
    let mut total = 0.0;
    for &c in &present {
        let mut scored: Vec<(f64, bool)> = pairs
            .pairs
            .iter()
            .map(|p| (p.probs[c], p.target == c))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        // mid-ranks, 1-based
        let mut rank_sum_pos = 0.0;
        let mut i = 0;
        while i < m {
            let mut j = i;
            while j + 1 < m && scored[j + 1].0 == scored[i].0 {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            rank_sum_pos += mid * scored[i..=j].iter().filter(|s| s.1).count() as f64;
            i = j + 1;
        }
        let np = scored.iter().filter(|s| s.1).count() as f64;
        let nn = m as f64 - np;
        total += (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
    }
    Ok(total / present.len() as f64)
}
