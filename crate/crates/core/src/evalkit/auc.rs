use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::cmp_f64;

/// Scores with binary labels (`true` = positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Metric("non-finite score".into()));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    fn check(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::Metric(format!(
                "need both classes, got {p} positives and {n} negatives"
            )));
        }
        Ok((p, n))
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability a
/// random positive outscores a random negative, ties counting one half.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (np, nn) = set.check()?;
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(set.scores[a], set.scores[b]));
    // midranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| set.labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (np * (np + 1)) as f64 / 2.0;
    Ok(u / (np as f64 * nn as f64))
}

/// ROC vertices (fpr, tpr) from (0, 0) to (1, 1); tied scores form one
/// diagonal segment.
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (np, nn) = set.check()?;
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(set.scores[b], set.scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == s {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn as f64, tp as f64 / np as f64));
    }
    Ok(points)
}

/// Area between the ROC curve and the line `tpr = tpr_min`, counted only
/// where the curve lies above it. Unnormalized: a perfect ranking scores
/// `1 - tpr_min`, and `tpr_min = 0` reproduces [`roc_auc`].
pub fn partial_auc(set: &ScoredSet, tpr_min: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tpr_min) {
        return Err(Error::Metric(format!("tpr_min {tpr_min} outside [0, 1]")));
    }
    let pts = roc_curve(set)?;
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        let df = f1 - f0;
        if df == 0.0 {
            continue;
        }
        let (a, b) = (t0 - tpr_min, t1 - tpr_min);
        area += if a >= 0.0 && b >= 0.0 {
            df * (a + b) / 2.0
        } else if a <= 0.0 && b <= 0.0 {
            0.0
        } else {
            // the segment crosses the band edge; keep the triangle above it
            let above = a.max(b);
            let frac = above / (a.abs() + b.abs());
            df * frac * above / 2.0
        };
    }
    Ok(area)
}
