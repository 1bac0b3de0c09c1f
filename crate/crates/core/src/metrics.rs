//! Prediction head, binary cross-entropy, and ranking metrics.

use std::cmp::Ordering;

use crate::error::{QinError, Result};
use crate::linalg::{dot, sigmoid};
use crate::params::HeadParams;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before `ln`.
pub const PROB_EPS: f64 = 1e-12;

/// `logit = w·x + b`, `prob = sigmoid(logit)`.
pub fn head_forward(head: &HeadParams, x: &[f64]) -> Result<(f64, f64)> {
    if x.len() != head.w.len() {
        return Err(QinError::dims("head_forward", &[head.w.len()], &[x.len()]));
    }
    let logit = dot(&head.w, x) + head.b;
    Ok((logit, sigmoid(logit)))
}

/// Accumulates head gradients for one sample and returns `dL/dx`.
pub fn head_backward(head: &HeadParams, x: &[f64], dlogit: f64, grad: &mut HeadParams) -> Vec<f64> {
    for (g, xi) in grad.w.iter_mut().zip(x) {
        *g += dlogit * xi;
    }
    grad.b += dlogit;
    head.w.iter().map(|w| w * dlogit).collect()
}

fn check_lengths(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a != b {
        return Err(QinError::dims(op, &[a], &[b]));
    }
    Ok(())
}

/// Mean binary cross-entropy over the batch.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(probs.len(), labels.len(), "bce_loss")?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// `dL/dlogit_i = (sigmoid(logit_i) - y_i) / N`, computed from the logits
/// (the probability clamp in [`bce_loss`] is not differentiated).
pub fn bce_backward(logits: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_lengths(logits.len(), labels.len(), "bce_backward")?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| (sigmoid(z) - y as f64) / n)
        .collect())
}

fn class_counts(labels: &[u8]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&y| y != 0).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(QinError::SingleClass);
    }
    Ok((pos, neg))
}

/// ROC AUC by the rank-sum (Mann–Whitney) statistic with average ranks for
/// ties, `O(N log N)`.
///
/// Everything is kept in integers until the final division: twice the
/// positive rank sum is an integer under average ranks, so the numerator
/// `2·R⁺ − n⁺(n⁺+1)` equals `2·wins + ties` exactly and the result is
/// bit-identical to [`auc_bruteforce`].
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len(), "auc")?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie group spanning ranks lo..=hi gets (lo+hi)/2,
    // so twice the rank is lo+hi.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]].total_cmp(&scores[order[start]]) == Ordering::Equal {
            end += 1;
        }
        let twice_rank = (start + 1 + end) as u128;
        let group_pos = order[start..end].iter().filter(|&&i| labels[i] != 0).count() as u128;
        twice_rank_sum += twice_rank * group_pos;
        start = end;
    }
    let numerator = twice_rank_sum - (pos as u128) * (pos as u128 + 1);
    Ok(numerator as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Pairwise definition: `(wins + ½·ties) / (n⁺·n⁻)`, `O(N²)`.
pub fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len(), "auc_bruteforce")?;
    let (pos, neg) = class_counts(labels)?;
    let mut twice: u128 = 0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            twice += match si.total_cmp(&sj) {
                Ordering::Greater => 2,
                Ordering::Equal => 1,
                Ordering::Less => 0,
            };
        }
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
}

impl std::fmt::Display for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "auc={:.6} logloss={:.6}", self.auc, self.logloss)
    }
}

pub fn metrics_from_probs(probs: &[f64], labels: &[u8]) -> Result<Metrics> {
    Ok(Metrics {
        auc: auc(probs, labels)?,
        logloss: bce_loss(probs, labels)?,
    })
}
