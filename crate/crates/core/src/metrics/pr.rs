//! Precision-recall curves and their step-sum area.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Points ordered by descending threshold, starting at the `(0, 1)` anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)`
    pub points: Vec<(f64, f64)>,
    /// Score inducing each point; the anchor uses `+inf`.
    pub thresholds: Vec<f64>,
}

pub(crate) fn check_labels(labels: &[u8]) -> Result<usize> {
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            _ => return Err(Error::Data(format!("label {l} is not binary"))),
        }
    }
    Ok(pos)
}

/// One point per distinct score, thresholds descending; a pixel is predicted
/// positive at threshold `t` when its score is `>= t`.
pub fn pr_curve<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let positives = check_labels(labels)?;
    if positives == 0 {
        return Err(Error::Precondition("recall is undefined without positive labels".into()));
    }
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut points = vec![(0.0, 1.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = s[order[i]];
        while i < order.len() && s[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
        thresholds.push(t);
    }
    Ok(PrCurve { points, thresholds })
}

/// `sum_n (R_n - R_{n-1}) P_n` over the curve.
pub fn aprc(curve: &PrCurve) -> f64 {
    curve.points.windows(2).map(|w| (w[1].0 - w[0].0) * w[1].1).sum()
}

/// Area under the PR curve of `scores` against `labels`.
pub fn aprc_of<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    pr_curve(scores, labels).map(|c| aprc(&c))
}

/// Expected APRC of uninformative scores: the positive fraction.
pub fn random_baseline_aprc(labels: &[u8]) -> Result<f64> {
    let positives = check_labels(labels)?;
    if positives == 0 {
        return Err(Error::Precondition("baseline undefined without positive labels".into()));
    }
    Ok(positives as f64 / labels.len() as f64)
}
