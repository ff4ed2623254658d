//! Order statistics and the split-conformal quantile rule.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Slack absorbing floating-point error before taking a ceiling, so that
/// e.g. `(19 + 1) · 0.95` maps to rank 19 rather than 20.
const CEIL_SLACK: f64 = 1e-9;

pub(crate) fn ceil_with_slack(x: f64) -> usize {
    (x - CEIL_SLACK).ceil().max(0.0) as usize
}

/// ⌈(n + 1)(1 − α)⌉, the 1-based rank of the conformal threshold among `n`
/// calibration scores. A rank above `n` selects the appended `+∞`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    ceil_with_slack((n as f64 + 1.0) * (1.0 - alpha)).max(1)
}

/// The `k`-th smallest score (1-based), or `+∞` when `k > n`.
///
/// Uses selection rather than a full sort.
pub fn order_statistic<T: Scalar>(scores: &[T], k: usize) -> Result<T> {
    if scores.is_empty() {
        return Err(invalid("order statistic of an empty score list"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(invalid(format!("non-finite score at position {i}")));
    }
    if k == 0 {
        return Err(invalid("order statistics are 1-based"));
    }
    if k > scores.len() {
        return Ok(T::infinity());
    }
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite"));
    Ok(*kth)
}

/// The ⌈level · n⌉-th smallest score; `+∞` when that rank exceeds `n`.
pub fn empirical_quantile<T: Scalar>(scores: &[T], level: f64) -> Result<T> {
    if !(level > 0.0) || !level.is_finite() {
        return Err(invalid(format!("quantile level {level} must be positive")));
    }
    let k = ceil_with_slack(level * scores.len() as f64).max(1);
    order_statistic(scores, k)
}

/// Split-conformal threshold: the ⌈(n+1)(1−α)⌉/n empirical quantile of
/// `scores ∪ {+∞}`.
pub fn conformal_quantile<T: Scalar>(scores: &[T], alpha: f64) -> Result<T> {
    order_statistic(scores, conformal_rank(scores.len(), alpha))
}
