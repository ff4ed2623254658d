//! Correlation and paired significance tests.

use serde::Serialize;

use super::dist::student_t_two_sided;
use crate::error::{invalid, Error, Result};

/// Significance level applied after the Bonferroni adjustment.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); `None` for fewer than two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Population standard deviation (n denominator).
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value from Student's t with `n − 2` degrees of freedom.
    pub p: f64,
    pub n: usize,
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(invalid(format!("correlation inputs differ in length ({} vs {})", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(invalid("correlation needs at least three points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("first"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("second"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(Correlation { r, p, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: usize,
    pub mean_difference: f64,
    pub p_raw: f64,
    /// `min(1, p_raw · n_comparisons)`.
    pub p_adjusted: f64,
    pub n_comparisons: usize,
    pub significant: bool,
}

/// Paired t-test on `a − b` with a Bonferroni correction for `n_comparisons` tests.
pub fn paired_t_test(a: &[f64], b: &[f64], n_comparisons: usize) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(invalid(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(invalid("paired test needs at least two pairs"));
    }
    if n_comparisons == 0 {
        return Err(invalid("Bonferroni correction needs at least one comparison"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sd = sample_std(&diffs).expect("at least two pairs");
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::DegenerateTest);
    }
    let n = diffs.len();
    let m = mean(&diffs);
    let t = m / (sd / (n as f64).sqrt());
    let df = n - 1;
    let p_raw = student_t_two_sided(t, df as f64);
    let p_adjusted = (p_raw * n_comparisons as f64).min(1.0);
    Ok(PairedTTest {
        t,
        df,
        mean_difference: m,
        p_raw,
        p_adjusted,
        n_comparisons,
        significant: p_adjusted < SIGNIFICANCE_LEVEL,
    })
}


/// One-sample Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod ks_tests {
    use super::ks_statistic;

    #[test]
    fn ks_against_uniform() {
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_statistic(&samples, |x| x) - 0.005).abs() < 1e-12);
        assert!((ks_statistic(&[0.0, 0.0], |x| x) - 1.0).abs() < 1e-12);
    }
}
