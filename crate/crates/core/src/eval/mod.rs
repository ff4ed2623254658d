//! Coverage, efficiency, and adaptivity metrics plus the rank analyses.

pub mod dist;
pub mod stats;

use serde::Serialize;

use crate::calibrator::PredictionSet;
use crate::error::{invalid, Result};
use crate::prob::{rank_of_label, ProbVector};
use crate::scalar::Scalar;

pub use stats::{mean, paired_t_test, pearson_r, sample_std, Correlation, PairedTTest};

fn check_pairs(sets: &[PredictionSet], labels: &[usize]) -> Result<()> {
    if sets.is_empty() {
        return Err(invalid("no prediction sets to evaluate"));
    }
    if sets.len() != labels.len() {
        return Err(invalid(format!("{} sets but {} labels", sets.len(), labels.len())));
    }
    Ok(())
}

/// Fraction of sets containing their label.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    check_pairs(sets, labels)?;
    let hits = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Set-size strata for the size-stratified coverage violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SscvBins {
    /// Inclusive `(low, high)` bounds; `None` means unbounded above.
    pub bins: Vec<(usize, Option<usize>)>,
}

impl Default for SscvBins {
    fn default() -> Self {
        Self {
            bins: vec![(0, Some(1)), (2, Some(3)), (4, Some(10)), (11, Some(100)), (101, None)],
        }
    }
}

impl SscvBins {
    pub fn bin_of(&self, size: usize) -> Option<usize> {
        self.bins
            .iter()
            .position(|&(lo, hi)| size >= lo && hi.is_none_or(|h| size <= h))
    }
}

/// `max` over occupied bins of `|(1 − α) − coverage within the bin|`.
pub fn sscv(sets: &[PredictionSet], labels: &[usize], alpha: f64, bins: &SscvBins) -> Result<f64> {
    check_pairs(sets, labels)?;
    let mut hits = vec![0usize; bins.bins.len()];
    let mut counts = vec![0usize; bins.bins.len()];
    for (s, &y) in sets.iter().zip(labels) {
        let b = bins
            .bin_of(s.set_size())
            .ok_or_else(|| invalid(format!("set size {} falls outside every bin", s.set_size())))?;
        counts[b] += 1;
        hits[b] += usize::from(s.contains(y));
    }
    counts
        .iter()
        .zip(&hits)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &h)| ((1.0 - alpha) - h as f64 / c as f64).abs())
        .reduce(f64::max)
        .ok_or_else(|| invalid("every SSCV bin is empty"))
}

/// Smallest `k` such that top-`k` sets reach marginal coverage `1 − α`.
pub fn optimal_top_k<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize], alpha: f64) -> Result<usize> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(invalid("optimal_top_k needs equal, non-empty probability and label lists"));
    }
    let ranks: Vec<usize> = probs.iter().zip(labels).map(|(p, &y)| rank_of_label(p, y)).collect();
    Ok(top_k_from_ranks(&ranks, probs[0].n_classes(), alpha))
}

pub(crate) fn top_k_from_ranks(ranks: &[usize], n_classes: usize, alpha: f64) -> usize {
    let mut histogram = vec![0usize; n_classes + 1];
    for &r in ranks {
        histogram[r.min(n_classes)] += 1;
    }
    let needed = (1.0 - alpha) * ranks.len() as f64 - 1e-9;
    let mut covered = 0;
    for (k, &count) in histogram.iter().enumerate().skip(1) {
        covered += count;
        if covered as f64 >= needed {
            return k;
        }
    }
    n_classes
}

/// True-class rank statistics for one equal-width stratum of base ranks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankShiftBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_base: Option<f64>,
    pub mean_tta: Option<f64>,
    pub std_base: Option<f64>,
    pub std_tta: Option<f64>,
}

/// Bins examples into `n_bins` equal-width intervals of base rank spanning
/// `[1, max base rank]` (the last interval closed) and summarizes base and
/// TTA ranks within each. Standard deviations use the population form.
pub fn rank_shift_bins<T: Scalar>(
    base_probs: &[ProbVector<T>],
    tta_probs: &[ProbVector<T>],
    labels: &[usize],
    n_bins: usize,
) -> Result<Vec<RankShiftBin>> {
    if base_probs.len() != tta_probs.len() || base_probs.len() != labels.len() || labels.is_empty() {
        return Err(invalid("rank shift needs equal, non-empty inputs"));
    }
    if n_bins == 0 {
        return Err(invalid("rank shift needs at least one bin"));
    }
    let base: Vec<usize> = base_probs.iter().zip(labels).map(|(p, &y)| rank_of_label(p, y)).collect();
    let tta: Vec<usize> = tta_probs.iter().zip(labels).map(|(p, &y)| rank_of_label(p, y)).collect();
    Ok(bin_ranks(&base, &tta, n_bins))
}

pub(crate) fn bin_ranks(base: &[usize], tta: &[usize], n_bins: usize) -> Vec<RankShiftBin> {
    let max = *base.iter().max().expect("non-empty") as f64;
    let width = (max - 1.0) / n_bins as f64;
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_bins];
    for (&b, &t) in base.iter().zip(tta) {
        let idx = if width == 0.0 {
            0
        } else {
            (((b as f64 - 1.0) / width).floor() as usize).min(n_bins - 1)
        };
        members[idx].push((b as f64, t as f64));
    }
    members
        .into_iter()
        .enumerate()
        .map(|(j, m)| {
            let b: Vec<f64> = m.iter().map(|p| p.0).collect();
            let t: Vec<f64> = m.iter().map(|p| p.1).collect();
            let occupied = !m.is_empty();
            RankShiftBin {
                lower: 1.0 + j as f64 * width,
                upper: 1.0 + (j + 1) as f64 * width,
                count: m.len(),
                mean_base: occupied.then(|| mean(&b)),
                mean_tta: occupied.then(|| mean(&t)),
                std_base: occupied.then(|| stats::population_std(&b)),
                std_tta: occupied.then(|| stats::population_std(&t)),
            }
        })
        .collect()
}

/// Per-class summary; classes without test examples are `absent`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSizes {
    pub class: usize,
    pub count: usize,
    pub mean_size: Option<f64>,
    pub coverage: Option<f64>,
}

impl ClassSizes {
    pub fn absent(&self) -> bool {
        self.count == 0
    }
}

pub fn class_conditional_sizes(sets: &[PredictionSet], labels: &[usize], n_classes: usize) -> Result<Vec<ClassSizes>> {
    check_pairs(sets, labels)?;
    let mut totals = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    let mut hits = vec![0usize; n_classes];
    for (s, &y) in sets.iter().zip(labels) {
        if y >= n_classes {
            return Err(invalid(format!("label {y} out of range for {n_classes} classes")));
        }
        totals[y] += s.set_size();
        counts[y] += 1;
        hits[y] += usize::from(s.contains(y));
    }
    Ok((0..n_classes)
        .map(|c| ClassSizes {
            class: c,
            count: counts[c],
            mean_size: (counts[c] > 0).then(|| totals[c] as f64 / counts[c] as f64),
            coverage: (counts[c] > 0).then(|| hits[c] as f64 / counts[c] as f64),
        })
        .collect())
}

/// Top-1 accuracy per class; `None` for absent classes.
pub fn class_accuracy<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize], n_classes: usize) -> Vec<Option<f64>> {
    let mut counts = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    for (p, &y) in probs.iter().zip(labels) {
        counts[y] += 1;
        correct[y] += usize::from(p.argmax() == y);
    }
    (0..n_classes)
        .map(|c| (counts[c] > 0).then(|| correct[c] as f64 / counts[c] as f64))
        .collect()
}

/// Correlation across classes present in both inputs (absent classes dropped).
pub fn present_class_correlation(x: &[Option<f64>], y: &[Option<f64>]) -> Result<Correlation> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip();
    pearson_r(&xs, &ys)
}

/// Metrics for one method on one test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub avg_set_size: f64,
    pub class_sizes: Vec<Option<f64>>,
    pub sscv: f64,
    pub per_example_sizes: Vec<usize>,
    pub n_test: usize,
}

pub fn evaluate(sets: &[PredictionSet], labels: &[usize], alpha: f64, n_classes: usize) -> Result<EvalReport> {
    let per_example_sizes: Vec<usize> = sets.iter().map(PredictionSet::set_size).collect();
    Ok(EvalReport {
        coverage: coverage(sets, labels)?,
        avg_set_size: per_example_sizes.iter().sum::<usize>() as f64 / sets.len() as f64,
        class_sizes: class_conditional_sizes(sets, labels, n_classes)?
            .into_iter()
            .map(|c| c.mean_size)
            .collect(),
        sscv: sscv(sets, labels, alpha, &SscvBins::default())?,
        per_example_sizes,
        n_test: sets.len(),
    })
}
