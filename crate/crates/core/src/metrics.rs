//! Threshold-free and fixed-TPR ranking metrics. A score above the threshold
//! counts as a positive call (`score > t`).

use crate::error::{Error, Result};

fn check(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Numeric(
            "metric needs non-empty positive and negative sets".into(),
        ));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half. Computed from the Mann–Whitney rank sum.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Twice the positive rank sum keeps tied mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the mid-rank (i+1+j)/2.
        let twice_mid = (i + 1 + j) as u128;
        let n_pos = all[i..j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_mid * n_pos;
        i = j;
    }
    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    // U = R − np(np+1)/2, in doubled units: 2U = 2R − np(np+1).
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

/// One point of the ROC step function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Every achievable operating point: thresholds at +∞, midpoints between
/// adjacent distinct scores, and −∞, in decreasing threshold order.
pub fn roc_points(pos: &[f64], neg: &[f64]) -> Result<Vec<RocPoint>> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() {
            0.5 * (v + all[i].0)
        } else {
            f64::NEG_INFINITY
        };
        points.push(RocPoint {
            threshold,
            tpr: tp as f64 / np,
            fpr: fp as f64 / nn,
        });
    }
    Ok(points)
}

/// Smallest FPR among thresholds whose TPR reaches `target_tpr`.
pub fn fpr_at_tpr(pos: &[f64], neg: &[f64], target_tpr: f64) -> Result<f64> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Numeric(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    let points = roc_points(pos, neg)?;
    Ok(points
        .iter()
        .filter(|p| meets(p.tpr, target_tpr))
        .map(|p| p.fpr)
        .fold(1.0, f64::min))
}

pub(crate) fn meets(tpr: f64, target: f64) -> bool {
    tpr >= target - 1e-12
}

/// Fraction of scores strictly above `threshold`.
pub fn rate_above(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}
