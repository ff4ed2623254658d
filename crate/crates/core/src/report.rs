//! Serializers for run, simulation, and analysis reports.
//!
//! JSON output is pretty-printed with fields in declaration order, so equal
//! reports serialize to identical bytes. Non-finite floats become `null`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{AnalysisReport, MeanStd, RunReport, SimulationReport};

pub fn to_json<S: Serialize>(report: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Document(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn fmt_mean_std(m: &MeanStd, digits: usize) -> String {
    match m.std {
        Some(s) => format!("{:.digits$} ± {:.digits$}", m.mean, s),
        None => format!("{:.digits$}", m.mean),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

/// One table per α: rows are methods, columns set size, coverage and SSCV.
/// Highlighted set sizes are bold.
pub fn run_markdown(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Conformal set sizes ({}, {} splits, seed {})\n",
        r.score.name(),
        r.n_splits,
        r.seed
    );
    for &alpha in &r.alphas {
        let _ = writeln!(out, "## alpha = {alpha}\n");
        out.push_str("| method | set size | coverage | SSCV | p vs baseline |\n|---|---|---|---|---|\n");
        for c in r.cells.iter().filter(|c| c.alpha == alpha) {
            let size = fmt_mean_std(&c.set_size, 3);
            let size = if c.highlighted { format!("**{size}**") } else { size };
            let p = c.vs_baseline.map_or_else(|| "-".to_string(), |t| format!("{:.3e}", t.p_adjusted));
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                c.method,
                size,
                fmt_mean_std(&c.coverage, 4),
                fmt_mean_std(&c.sscv, 4),
                p
            );
        }
        out.push('\n');
    }
    if !r.notices.is_empty() {
        out.push_str("Notes:\n\n");
        for n in &r.notices {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}

/// Per-split rows.
pub fn run_csv(r: &RunReport) -> String {
    let mut out = String::from("split,method,alpha,coverage,avg_set_size,sscv,q_hat,n_cal,k_reg,lambda\n");
    for s in &r.splits {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.split,
            s.method,
            s.alpha,
            s.coverage,
            s.avg_set_size,
            s.sscv,
            s.q_hat.map_or_else(|| "inf".to_string(), |q| q.to_string()),
            s.n_cal,
            s.k_reg.map_or_else(String::new, |k| k.to_string()),
            opt(s.lambda)
        );
    }
    out
}

/// Aggregated cells.
pub fn summary_csv(r: &RunReport) -> String {
    let mut out = String::from(
        "alpha,method,set_size_mean,set_size_std,coverage_mean,coverage_std,sscv_mean,sscv_std,p_vs_baseline,highlighted\n",
    );
    for c in &r.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.alpha,
            c.method,
            c.set_size.mean,
            opt(c.set_size.std),
            c.coverage.mean,
            opt(c.coverage.std),
            c.sscv.mean,
            opt(c.sscv.std),
            opt(c.vs_baseline.map(|t| t.p_adjusted)),
            c.highlighted
        );
    }
    out
}

/// Histogram of per-trial coverage with `n_bins` equal bins over the sample range.
pub fn histogram_csv(samples: &[f64], n_bins: usize) -> String {
    let mut out = String::from("lower,upper,count\n");
    if samples.is_empty() || n_bins == 0 {
        return out;
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", lo + b as f64 * width, lo + (b + 1) as f64 * width, c);
    }
    out
}

pub fn simulation_markdown(r: &SimulationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Coverage simulation ({}, {}, alpha = {})\n", r.method, r.score.name(), r.alpha);
    let _ = writeln!(out, "- trials: {}", r.n_trials);
    let _ = writeln!(out, "- calibration / test examples: {} / {}", r.n_cal, r.n_test);
    let _ = writeln!(
        out,
        "- mean coverage: {:.5}{}",
        r.mean_coverage,
        r.standard_error.map_or_else(String::new, |s| format!(" (SE {s:.5})"))
    );
    let _ = writeln!(
        out,
        "- guarantee band: [{:.5}, {:.5}], within: {}",
        r.guarantee_band.0, r.guarantee_band.1, r.within_band
    );
    let _ = writeln!(
        out,
        "- KS distance to Beta({}, {}): {:.4}",
        r.beta_law.0, r.beta_law.1, r.ks_statistic
    );
    out
}

pub fn simulation_csv(r: &SimulationReport) -> String {
    let mut out = String::from("trial,coverage\n");
    for (i, c) in r.samples.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}

pub fn analysis_markdown(r: &AnalysisReport) -> String {
    let mut out = String::from("# Analysis\n\n## Optimal Top-K\n\n| predictor | alpha | k |\n|---|---|---|\n");
    for t in &r.top_k {
        let _ = writeln!(out, "| {} | {} | {} |", t.predictor, t.alpha, t.k);
    }
    for s in &r.rank_shift {
        let _ = writeln!(
            out,
            "\n## True-class rank: {} vs {}\n\n| base rank | n | mean base | mean | std base | std |\n|---|---|---|---|---|---|",
            s.predictor, s.reference
        );
        for b in &s.bins {
            let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "| [{:.1}, {:.1}] | {} | {} | {} | {} | {} |",
                b.lower,
                b.upper,
                b.count,
                f(b.mean_base),
                f(b.mean_tta),
                f(b.std_base),
                f(b.std_tta)
            );
        }
    }
    if !r.correlations.is_empty() {
        out.push_str("\n## Class-level correlations with size change\n\n| predictor | with size | with error rate |\n|---|---|---|\n");
        for c in &r.correlations {
            let f = |x: &Option<crate::eval::Correlation>| {
                x.map_or_else(|| "-".to_string(), |c| format!("r = {:.3} (p = {:.2e})", c.r, c.p))
            };
            let _ = writeln!(out, "| {} | {} | {} |", c.predictor, f(&c.size_vs_change), f(&c.difficulty_vs_change));
        }
    }
    if !r.notices.is_empty() {
        out.push_str("\nNotes:\n\n");
        for n in &r.notices {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}

/// Class table: one accuracy and one mean-size column per predictor.
pub fn analysis_csv(r: &AnalysisReport) -> String {
    let mut out = String::from("class,count");
    for p in &r.predictors {
        let _ = write!(out, ",accuracy_{p},mean_size_{p}");
    }
    out.push('\n');
    for c in &r.classes {
        let _ = write!(out, "{},{}", c.class, c.count);
        for (a, s) in c.accuracy.iter().zip(&c.mean_size) {
            let _ = write!(out, ",{},{}", opt(*a), opt(*s));
        }
        out.push('\n');
    }
    out
}

pub fn top_k_csv(r: &AnalysisReport) -> String {
    let mut out = String::from("predictor,alpha,k\n");
    for t in &r.top_k {
        let _ = writeln!(out, "{},{},{}", t.predictor, t.alpha, t.k);
    }
    out
}

pub fn rank_shift_csv(r: &AnalysisReport) -> String {
    let mut out = String::from("predictor,reference,lower,upper,count,mean_base,mean,std_base,std\n");
    for s in &r.rank_shift {
        for b in &s.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.predictor,
                s.reference,
                b.lower,
                b.upper,
                b.count,
                opt(b.mean_base),
                opt(b.mean_tta),
                opt(b.std_base),
                opt(b.std_tta)
            );
        }
    }
    out
}

pub fn write(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
