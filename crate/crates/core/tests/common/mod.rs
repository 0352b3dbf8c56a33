//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use qmrkit::eval::{EvalPair, EvalPairs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// k-th smallest by counting, no sorting.
fn kth(values: &[usize], k: usize) -> usize {
    *values
        .iter()
        .find(|&&v| {
            let below = values.iter().filter(|&&u| u < v).count();
            let upto = values.iter().filter(|&&u| u <= v).count();
            below <= k && k < upto
        })
        .unwrap()
}

pub fn med_r_oracle(p: &EvalPairs) -> f64 {
    let d: Vec<usize> = p.pairs.iter().map(|q| q.target.abs_diff(q.predicted)).collect();
    let n = d.len();
    if n % 2 == 1 {
        kth(&d, n / 2) as f64
    } else {
        (kth(&d, n / 2 - 1) + kth(&d, n / 2)) as f64 / 2.0
    }
}

pub fn recall_oracle(p: &EvalPairs, k: usize) -> f64 {
    let mut hits = 0;
    for q in &p.pairs {
        let (a, b) = (q.target as i64, q.predicted as i64);
        if (a - b).abs() < k as i64 {
            hits += 1;
        }
    }
    100.0 * hits as f64 / p.pairs.len() as f64
}

/// Confusion counts from explicit truth/decision/window vectors.
pub fn prf_oracle(p: &EvalPairs, k: usize, threshold: f64) -> (f64, f64, f64, f64) {
    let mut cm = [[0usize; 2]; 2]; // [truth][decision]
    for q in &p.pairs {
        let truth: Vec<bool> = (0..p.n).map(|j| j == q.target).collect();
        let decision: Vec<bool> = q.probs.iter().map(|&v| v >= threshold).collect();
        let window: Vec<bool> = (0..p.n)
            .map(|j| (j as i64 - q.target as i64).abs() < k as i64)
            .collect();
        for j in 0..p.n {
            if window[j] {
                cm[truth[j] as usize][decision[j] as usize] += 1;
            }
        }
    }
    let (tp, fp, fn_, tn) = (cm[1][1], cm[0][1], cm[1][0], cm[0][0]);
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let accuracy = (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64;
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, accuracy, f)
}

/// Pairwise-ranking AUC: P(score_pos > score_neg) + 0.5 P(tie), macro over present classes.
pub fn auc_oracle(p: &EvalPairs) -> f64 {
    let mut classes: Vec<usize> = p.pairs.iter().map(|q| q.target).collect();
    classes.sort();
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let (mut wins, mut count) = (0.0, 0.0);
        for a in p.pairs.iter().filter(|q| q.target == c) {
            for b in p.pairs.iter().filter(|q| q.target != c) {
                count += 1.0;
                if a.probs[c] > b.probs[c] {
                    wins += 1.0;
                } else if a.probs[c] == b.probs[c] {
                    wins += 0.5;
                }
            }
        }
        total += wins / count;
    }
    total / classes.len() as f64
}

/// Random pairs with quantised probabilities so ties occur.
pub fn random_pairs(seed: u64) -> EvalPairs {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(2..12);
    let m = r.random_range(1..40);
    let pairs = (0..m)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64 + 0.01).collect();
            let s: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let mut predicted = 0;
            for j in 0..n {
                if probs[j] > probs[predicted] {
                    predicted = j;
                }
            }
            EvalPair {
                target: r.random_range(0..n),
                predicted,
                probs,
            }
        })
        .collect();
    EvalPairs::new(n, pairs).unwrap()
}
