//! ROC analysis: binary AUC, multiclass mAUC (Hand & Till), ROC curves and
//! confusion matrices.

use serde::{Deserialize, Serialize};

use crate::cohort::Diagnosis;
use crate::error::{Error, Result};

/// A probability triple (NL, MCI, DEMENTIA) with its true class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub probs: [f64; 3],
    pub actual: Diagnosis,
}

impl ScoredSample {
    pub fn new(probs: [f64; 3], actual: Diagnosis) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite()) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!("probabilities {probs:?} do not sum to 1")));
        }
        Ok(ScoredSample { probs, actual })
    }

    /// Most probable class; ties go to the lower ordinal.
    pub fn predicted(&self) -> Diagnosis {
        let mut best = 0;
        for k in 1..3 {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        Diagnosis::ALL[best]
    }
}

fn check_two_sided(samples: &[(f64, bool)]) -> Result<(usize, usize)> {
    let n_pos = samples.iter().filter(|s| s.1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::data("AUC needs at least one positive and one negative sample"));
    }
    if samples.iter().any(|s| s.0.is_nan()) {
        return Err(Error::data("AUC scores must not be NaN"));
    }
    Ok((n_pos, n_neg))
}

/// Rank-based (Mann–Whitney) AUC with mid-ranks for ties.
pub fn auc_binary(samples: &[(f64, bool)]) -> Result<f64> {
    let (n_pos, n_neg) = check_two_sided(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.total_cmp(&samples[b].0));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].0 == samples[order[i]].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| samples[k].1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Â(i|j): samples of classes i and j, scored by their probability of class i.
fn conditional_auc(samples: &[ScoredSample], i: Diagnosis, j: Diagnosis) -> Result<f64> {
    let pairs: Vec<(f64, bool)> = samples
        .iter()
        .filter(|s| s.actual == i || s.actual == j)
        .map(|s| (s.probs[i.ordinal()], s.actual == i))
        .collect();
    auc_binary(&pairs)
}

/// Hand–Till multiclass AUC over the classes present in `samples`.
pub fn mauc(samples: &[ScoredSample]) -> Result<f64> {
    let present: Vec<Diagnosis> = Diagnosis::ALL
        .into_iter()
        .filter(|d| samples.iter().any(|s| s.actual == *d))
        .collect();
    if present.len() < 2 {
        return Err(Error::data("mAUC needs at least two classes present"));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            total += (conditional_auc(samples, i, j)? + conditional_auc(samples, j, i)?) / 2.0;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// One-vs-rest binary samples for `class`.
pub fn one_vs_rest(samples: &[ScoredSample], class: Diagnosis) -> Vec<(f64, bool)> {
    samples
        .iter()
        .map(|s| (s.probs[class.ordinal()], s.actual == class))
        .collect()
}

/// ROC points from a descending threshold sweep over distinct scores,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(samples: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    let (n_pos, n_neg) = check_two_sided(samples)?;
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoid-rule area under a curve of (fpr, tpr) points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Counts with rows = actual class, columns = predicted class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..3).map(|k| self.counts[k][k]).sum();
        correct as f64 / self.total().max(1) as f64
    }
}

pub fn confusion(samples: &[ScoredSample]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for s in samples {
        cm.counts[s.actual.ordinal()][s.predicted().ordinal()] += 1;
    }
    cm
}

/// mAUC plus one-vs-rest AUC per class (absent when a class has no samples
/// or is the only class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mauc: f64,
    pub per_class_auc: [Option<f64>; 3],
    pub confusion: ConfusionMatrix,
}

pub fn summarize(samples: &[ScoredSample]) -> Result<ScoreSummary> {
    let m = mauc(samples)?;
    let per_class_auc = Diagnosis::ALL.map(|d| auc_binary(&one_vs_rest(samples, d)).ok());
    Ok(ScoreSummary {
        n: samples.len(),
        mauc: m,
        per_class_auc,
        confusion: confusion(samples),
    })
}
