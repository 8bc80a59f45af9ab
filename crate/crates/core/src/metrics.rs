//! Attack evaluation metrics: ROC staircase, trapezoidal AUC, best
//! threshold accuracy, and the low-false-positive operating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument("metrics need both classes present".into()));
    }
    Ok((p as f64, n as f64))
}

/// ROC staircase from (0,0) to (1,1), one point per distinct score
/// threshold (descending). Tied scores advance both rates in one jump, so
/// the trapezoid under the curve credits ties with 1/2.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (p, n) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / n, tp / p));
    }
    Ok(points)
}

/// Area under the ROC staircase; equal to the Mann-Whitney statistic with
/// half credit for tied scores.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let roc = roc_curve(scores, labels)?;
    let mut area = 0.0;
    for w in roc.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area)
}

/// Best-threshold accuracy over the evaluation set itself. Optimistic by
/// construction; reported because the attack-success-rate convention in
/// the membership-inference literature does the same.
pub fn asr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = class_counts(scores, labels)?;
    let roc = roc_curve(scores, labels)?;
    let best = roc
        .iter()
        .map(|&(fpr, tpr)| (tpr * p + (1.0 - fpr) * n) / (p + n))
        .fold(f64::MIN, f64::max);
    Ok(best)
}

/// Maximal TPR among ROC points with FPR at or below the cap. The (0,0)
/// point always qualifies, so the floor is 0.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], fpr_cap: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr_cap) {
        return Err(Error::InvalidArgument(format!("fpr cap {fpr_cap} outside [0, 1]")));
    }
    let roc = roc_curve(scores, labels)?;
    Ok(roc
        .iter()
        .filter(|&&(fpr, _)| fpr <= fpr_cap)
        .map(|&(_, tpr)| tpr)
        .fold(0.0, f64::max))
}

/// Standard deviation of the AUC under the null (no membership signal),
/// from the Mann-Whitney U variance for label-permuted scores.
pub fn mann_whitney_null_sigma(positives: usize, negatives: usize) -> f64 {
    let (p, n) = (positives as f64, negatives as f64);
    ((p + n + 1.0) / (12.0 * p * n)).sqrt()
}

/// One attack method's evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub asr: f64,
    pub auc: f64,
    pub tpr_at_low_fpr: f64,
    pub fpr_cap: f64,
    pub positives: usize,
    pub negatives: usize,
    pub roc: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn from_scores(
        method: &str,
        scores: &[f64],
        labels: &[bool],
        fpr_cap: f64,
    ) -> Result<Self> {
        let (p, n) = class_counts(scores, labels)?;
        Ok(MetricReport {
            method: method.to_string(),
            asr: asr(scores, labels)?,
            auc: auc(scores, labels)?,
            tpr_at_low_fpr: tpr_at_fpr(scores, labels, fpr_cap)?,
            fpr_cap,
            positives: p as usize,
            negatives: n as usize,
            roc: roc_curve(scores, labels)?,
        })
    }
}
