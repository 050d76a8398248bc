//! Pos@Top: the fraction of positives scored strictly above the top-scoring negative.

use alloc::vec::Vec;

use crate::data::{require_both_classes, Label};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<ScoredSet> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: labels.len(), found: scores.len() });
        }
        Ok(ScoredSet { scores, labels })
    }
}

/// Ties with the top negative do not count as ranked above it.
pub fn pos_at_top(set: &ScoredSet) -> Result<f64> {
    if set.scores.len() != set.labels.len() {
        return Err(Error::DimensionMismatch { expected: set.labels.len(), found: set.scores.len() });
    }
    require_both_classes(&set.labels)?;
    if set.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    let top_negative = set
        .scores
        .iter()
        .zip(&set.labels)
        .filter(|(_, l)| !l.is_positive())
        .fold(f64::NEG_INFINITY, |acc, (&s, _)| acc.max(s));
    let (mut above, mut n_pos) = (0usize, 0usize);
    for (&s, l) in set.scores.iter().zip(&set.labels) {
        if l.is_positive() {
            n_pos += 1;
            if s > top_negative {
                above += 1;
            }
        }
    }
    Ok(above as f64 / n_pos as f64)
}

/// Mean and standard error (sample standard deviation over `√k`) of per-fold values.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldSummary {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_fold_metric(values: &[f64]) -> Result<FoldSummary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no fold values to summarize".into()));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let stderr = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        libm::sqrt(var / k)
    };
    Ok(FoldSummary { mean, stderr })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OvaReport {
    pub per_class: Vec<f64>,
    /// Unweighted mean over classes.
    pub macro_average: f64,
}

/// One-vs-all Pos@Top: `per_class_scored[c]` ranks every item with class `c` as positive.
pub fn ova_pos_at_top(per_class_scored: &[ScoredSet]) -> Result<OvaReport> {
    if per_class_scored.is_empty() {
        return Err(Error::InvalidArgument("no classes to evaluate".into()));
    }
    let per_class = per_class_scored.iter().map(pos_at_top).collect::<Result<Vec<_>>>()?;
    let macro_average = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(OvaReport { per_class, macro_average })
}
