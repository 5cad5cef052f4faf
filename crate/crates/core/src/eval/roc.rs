use serde::Serialize;

use crate::error::{CmfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores `>= threshold` count as positive; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over the unique scores with trapezoid AUC. Tied scores
/// move both rates at once, so each tied positive/negative pair counts 0.5.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(CmfError::invalid(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CmfError::Numerical("ROC scores contain NaN".into()));
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(CmfError::invalid("ROC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of one positive × one negative.
    let mut area2 = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push(RocPoint { threshold: s, fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64 });
    }
    Ok(RocCurve { points, auc: area2 as f64 / (2.0 * (p * n) as f64) })
}

/// One-vs-rest curve for `class`.
pub fn roc_auc(scores: &[f64], labels: &[usize], class: usize) -> Result<RocCurve> {
    let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    roc_curve(scores, &positive)
}
