//! Probability vectors, numerically stable softmax, and class ranking.

use std::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Absolute tolerance on `Σ p = 1`.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// A distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T> {
    probs: Vec<T>,
}

impl<T: Scalar> ProbVector<T> {
    /// Validates that every entry lies in `[0, 1]` and that the entries sum to one.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("probability vector is empty"));
        }
        if let Some(i) = probs
            .iter()
            .position(|p| !p.is_finite() || *p < T::zero() || *p > T::one())
        {
            return Err(invalid(format!("probability {} at class {i} is outside [0, 1]", probs[i])));
        }
        let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn new_unchecked(probs: Vec<T>) -> Self {
        Self { probs }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<T> {
        self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// Highest-probability class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        self.class_order()[0]
    }

    /// Class indices sorted by descending probability, ties by ascending index.
    pub fn class_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| precedes(&self.probs, a, b));
        order
    }
}

/// Total order used everywhere classes are ranked.
pub(crate) fn precedes<T: Scalar>(probs: &[T], a: usize, b: usize) -> Ordering {
    probs[b]
        .partial_cmp(&probs[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// `exp(z − max z) / Σ exp(z − max z)`.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbVector<T>> {
    if logits.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(invalid(format!("non-finite logit {} at class {i}", logits[i])));
    }
    Ok(softmax_finite(logits))
}

/// Softmax for inputs already known to be finite.
pub(crate) fn softmax_finite<T: Scalar>(logits: &[T]) -> ProbVector<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    for p in &mut out {
        *p = *p / total;
    }
    ProbVector::new_unchecked(out)
}

/// 1-based position of `label` in the class order (see [`ProbVector::class_order`]).
pub fn rank_of_label<T: Scalar>(probs: &ProbVector<T>, label: usize) -> usize {
    let p = probs.as_slice();
    assert!(label < p.len(), "label {label} out of range for {} classes", p.len());
    1 + (0..p.len())
        .filter(|&j| precedes(p, j, label) == Ordering::Less)
        .count()
}
