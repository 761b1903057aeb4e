use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROC curve from a threshold sweep, with the Mann-Whitney AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`, one per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Area under `points` by the trapezoid rule.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// Higher scores are more anomalous; `labels[i]` is true for positives.
/// The AUC is `P(pos > neg) + P(pos = neg) / 2`, computed from average
/// ranks so tied scores count half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(crate::error::dim_err(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!(
            "score {bad} passed to the ROC sweep"
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ascending pass: average ranks per tie group.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

    // Descending sweep: one point per distinct threshold.
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let s = scores[order[i - 1]];
        while i > 0 && scores[order[i - 1]] == s {
            if labels[order[i - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    Ok(RocCurve { points, auc })
}
