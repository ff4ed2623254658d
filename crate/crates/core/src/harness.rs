//! Experiment drivers: repeated-split evaluation over a logit tensor,
//! Monte Carlo coverage simulation, and the rank/Top-K/class analyses.

use rayon::prelude::*;
use serde::Serialize;

use crate::calibrator::{check_alpha, FittedPredictor};
use crate::error::{config, invalid, Error, Result};
use crate::eval::dist::beta_cdf;
use crate::eval::stats::{ks_statistic, mean, sample_std};
use crate::eval::{
    class_accuracy, class_conditional_sizes, evaluate, optimal_top_k, paired_t_test, present_class_correlation,
    rank_shift_bins, Correlation, PairedTTest, RankShiftBin,
};
use crate::pipeline::{fit_predictor, method_weights, Method, ScoreChoice};
use crate::plan::ExperimentPlan;
use crate::rng::{RngState, INIT, SPLIT};
use crate::scores::ScoreKind;
use crate::synth::{coverage_band, coverage_beta_parameters, coverage_trial, SynthConfig, TrialConfig};
use crate::tensor::LogitTensor;
use crate::tta::{aggregate_all, split_validation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; absent with a single split.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: sample_std(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorSummary {
    pub n_examples: usize,
    pub n_augs: usize,
    pub n_classes: usize,
    pub aug_names: Vec<String>,
}

impl TensorSummary {
    pub fn of(t: &LogitTensor<f64>) -> Self {
        Self {
            n_examples: t.n_examples(),
            n_augs: t.n_augs(),
            n_classes: t.n_classes(),
            aug_names: t.aug_names().to_vec(),
        }
    }
}

/// Metrics of one method at one α on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitResult {
    pub split: usize,
    pub method: Method,
    pub alpha: f64,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub sscv: f64,
    /// `null` when the threshold is infinite.
    pub q_hat: Option<f64>,
    pub n_cal: usize,
    pub k_reg: Option<usize>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitWeights {
    pub split: usize,
    pub theta: Vec<f64>,
    pub near_zero: Vec<bool>,
    pub final_loss: Option<f64>,
}

/// One (α, method) entry aggregated over splits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub alpha: f64,
    pub method: Method,
    pub set_size: MeanStd,
    pub coverage: MeanStd,
    pub sscv: MeanStd,
    /// Paired t-test of this method's per-split set sizes against the baseline.
    pub vs_baseline: Option<PairedTTest>,
    /// Paired t-test against the method with the smallest mean set size.
    pub vs_best: Option<PairedTTest>,
    pub is_best: bool,
    /// Significantly smaller than the baseline, or indistinguishable from the best.
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tensor: TensorSummary,
    pub score: ScoreChoice,
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    pub beta: f64,
    pub n_splits: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub cells: Vec<Cell>,
    pub splits: Vec<SplitResult>,
    pub learned_weights: Vec<SplitWeights>,
    pub notices: Vec<String>,
}

/// Reads the plan's tensor and runs it.
pub fn run(plan: &ExperimentPlan) -> Result<RunReport> {
    plan.validate()?;
    let tensor = crate::io::read_tensor::<f64>(&plan.tensor)?;
    run_on(&tensor, plan)
}

/// Repeated-split evaluation. Each split halves the data into validation and
/// test, carves the weight-learning slice out of validation, and calibrates
/// every method on the same remaining examples.
pub fn run_on(tensor: &LogitTensor<f64>, plan: &ExperimentPlan) -> Result<RunReport> {
    plan.validate()?;
    let methods = plan.ordered_methods();
    let outputs: Vec<(Vec<SplitResult>, Option<SplitWeights>)> = (0..plan.n_splits)
        .into_par_iter()
        .map(|split| {
            run_split(tensor, plan, &methods, split).map_err(|e| Error::Split {
                split,
                seed: plan.seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut splits = Vec::new();
    let mut learned_weights = Vec::new();
    for (rows, weights) in outputs {
        splits.extend(rows);
        learned_weights.extend(weights);
    }

    let mut notices = Vec::new();
    if plan.n_splits == 1 {
        notices.push("n_splits = 1: standard deviations and paired t-tests are omitted".to_string());
    }
    let mut cells = Vec::new();
    for &alpha in &plan.alphas {
        cells.extend(summarize_alpha(&splits, &methods, alpha, plan.n_splits, &mut notices));
    }

    Ok(RunReport {
        tensor: TensorSummary::of(tensor),
        score: plan.score,
        alphas: plan.alphas.clone(),
        methods,
        beta: plan.beta,
        n_splits: plan.n_splits,
        seed: plan.seed,
        val_fraction: plan.val_fraction,
        cells,
        splits,
        learned_weights,
        notices,
    })
}

fn run_split(
    tensor: &LogitTensor<f64>,
    plan: &ExperimentPlan,
    methods: &[Method],
    split: usize,
) -> Result<(Vec<SplitResult>, Option<SplitWeights>)> {
    let n = tensor.n_examples();
    let rng = RngState::new(plan.seed).derive_indexed(SPLIT, split);
    let perm = rng.derive("halves").permutation(n);
    let half = n / 2;
    let n_val = ((half as f64 * plan.val_fraction).ceil() as usize).min(half);
    if n_val < 2 || n - half == 0 {
        return Err(invalid(format!("{n} examples are too few to form validation and test halves")));
    }
    let val = tensor.select(&perm[..n_val]);
    let test = tensor.select(&perm[half..]);
    let tta_split = split_validation(n_val, plan.beta, &rng.derive("tta-split"))?;
    let cal = val.select(&tta_split.cal_indices);

    let mut rows = Vec::new();
    let mut learned = None;
    for &method in methods {
        let weights = match method {
            Method::TtaLearned => {
                let outcome =
                    crate::tta::train_weights(&val, &tta_split.tta_indices, &plan.train, &rng.derive(INIT))?;
                learned = Some(SplitWeights {
                    split,
                    theta: outcome.weights.weights().to_vec(),
                    near_zero: outcome.weights.near_zero(),
                    final_loss: Some(outcome.final_loss()),
                });
                outcome.weights
            }
            other => method_weights(other, &val, &tta_split.tta_indices, &plan.train, &rng)?,
        };
        let cal_probs = aggregate_all(&cal, &weights)?;
        let test_probs = aggregate_all(&test, &weights)?;
        for &alpha in &plan.alphas {
            let fit = fit_predictor(&cal_probs, cal.labels(), alpha, plan.score, &rng)?;
            let sets = fit.predictor.predict_sets(&test_probs, &rng);
            let report = evaluate(&sets, test.labels(), alpha, tensor.n_classes())?;
            let (k_reg, lambda) = match fit.predictor.score_config.kind {
                ScoreKind::Raps { k_reg, lambda } => (Some(k_reg), Some(lambda)),
                ScoreKind::Aps => (None, None),
            };
            rows.push(SplitResult {
                split,
                method,
                alpha,
                coverage: report.coverage,
                avg_set_size: report.avg_set_size,
                sscv: report.sscv,
                q_hat: fit.predictor.q_hat.is_finite().then_some(fit.predictor.q_hat),
                n_cal: fit.predictor.n_cal,
                k_reg,
                lambda,
            });
        }
    }
    Ok((rows, learned))
}

fn summarize_alpha(
    splits: &[SplitResult],
    methods: &[Method],
    alpha: f64,
    n_splits: usize,
    notices: &mut Vec<String>,
) -> Vec<Cell> {
    let column = |m: Method, f: fn(&SplitResult) -> f64| -> Vec<f64> {
        splits
            .iter()
            .filter(|r| r.method == m && r.alpha == alpha)
            .map(f)
            .collect()
    };
    let sizes: Vec<Vec<f64>> = methods.iter().map(|&m| column(m, |r| r.avg_set_size)).collect();
    let best = (0..methods.len())
        .min_by(|&a, &b| mean(&sizes[a]).partial_cmp(&mean(&sizes[b])).expect("finite sizes"))
        .expect("at least one method");
    let baseline = methods.iter().position(|&m| m == Method::Baseline);
    let n_comparisons = methods.len().saturating_sub(1).max(1);
    let mut test = |i: usize, j: usize, what: &str| -> Option<PairedTTest> {
        if n_splits < 2 || i == j {
            return None;
        }
        match paired_t_test(&sizes[i], &sizes[j], n_comparisons) {
            Ok(t) => Some(t),
            Err(e) => {
                notices.push(format!("alpha {alpha}: {} vs {what}: {e}", methods[i]));
                None
            }
        }
    };

    let mut cells = Vec::new();
    for (i, &method) in methods.iter().enumerate() {
        let vs_baseline = baseline.and_then(|b| test(i, b, "baseline"));
        let vs_best = test(i, best, "best");
        let better_than_baseline = vs_baseline.is_some_and(|t| t.significant && t.t < 0.0);
        let tied_with_best = i == best || (n_splits >= 2 && vs_best.is_none_or(|t| !t.significant));
        cells.push(Cell {
            alpha,
            method,
            set_size: MeanStd::of(&sizes[i]),
            coverage: MeanStd::of(&column(method, |r| r.coverage)),
            sscv: MeanStd::of(&column(method, |r| r.sscv)),
            vs_baseline,
            vs_best,
            is_best: i == best,
            highlighted: better_than_baseline || tied_with_best,
        });
    }
    cells
}

/// Summary of a Monte Carlo coverage simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub method: Method,
    pub score: ScoreChoice,
    pub alpha: f64,
    pub n_trials: usize,
    pub n_val: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub beta: f64,
    pub seed: u64,
    pub mean_coverage: f64,
    pub std_coverage: Option<f64>,
    pub standard_error: Option<f64>,
    /// `[1 − α, 1 − α + 1/(n_cal + 1)]`.
    pub guarantee_band: (f64, f64),
    /// Mean coverage inside the band widened by three standard errors.
    pub within_band: bool,
    pub beta_law: (f64, f64),
    /// KS distance between per-trial coverage and the Beta law.
    pub ks_statistic: f64,
    pub samples: Vec<f64>,
}

pub fn simulate(synth: &SynthConfig, trial: &TrialConfig, seed: u64) -> Result<SimulationReport> {
    trial.validate()?;
    synth.validate()?;
    let samples = coverage_trial(synth, trial, &RngState::new(seed).derive("simulate"))?;
    let n_cal = trial.n_cal();
    let mean_coverage = mean(&samples);
    let std_coverage = sample_std(&samples);
    let standard_error = std_coverage.map(|s| s / (samples.len() as f64).sqrt());
    let band = coverage_band(n_cal, trial.alpha);
    let slack = 3.0 * standard_error.unwrap_or(0.0);
    let (a, b) = coverage_beta_parameters(n_cal, trial.alpha);
    Ok(SimulationReport {
        method: trial.method,
        score: trial.score,
        alpha: trial.alpha,
        n_trials: trial.n_trials,
        n_val: trial.n_val,
        n_cal,
        n_test: trial.n_test,
        beta: trial.beta,
        seed,
        mean_coverage,
        std_coverage,
        standard_error,
        guarantee_band: band,
        within_band: mean_coverage >= band.0 - slack && mean_coverage <= band.1 + slack,
        beta_law: (a, b),
        ks_statistic: ks_statistic(&samples, |x| beta_cdf(x, a, b)),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopK {
    pub predictor: String,
    pub alpha: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankShift {
    pub predictor: String,
    pub reference: String,
    pub bins: Vec<RankShiftBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: usize,
    pub count: usize,
    /// Per predictor, in input order.
    pub accuracy: Vec<Option<f64>>,
    pub mean_size: Vec<Option<f64>>,
}

/// Class-level association between the reference and one other predictor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCorrelation {
    pub predictor: String,
    /// Reference class size vs. change in class size.
    pub size_vs_change: Option<Correlation>,
    /// Reference class error rate vs. change in class size.
    pub difficulty_vs_change: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub predictors: Vec<String>,
    pub top_k: Vec<TopK>,
    pub rank_shift: Vec<RankShift>,
    pub classes: Vec<ClassRow>,
    pub correlations: Vec<ClassCorrelation>,
    pub notices: Vec<String>,
}

pub const RANK_SHIFT_BINS: usize = 5;

/// Compares fitted predictors on one labelled tensor. The first predictor
/// is the reference for rank shifts and class-level changes.
pub fn analyze(
    tensor: &LogitTensor<f64>,
    predictors: &[(String, FittedPredictor<f64>)],
    seed: u64,
) -> Result<AnalysisReport> {
    if predictors.is_empty() {
        return Err(config("analysis needs at least one predictor"));
    }
    let rng = RngState::new(seed).derive("analyze");
    let k = tensor.n_classes();
    let labels = tensor.labels();
    let mut probs = Vec::new();
    let mut sizes = Vec::new();
    let mut accuracy = Vec::new();
    let mut top_k = Vec::new();
    for (name, p) in predictors {
        check_alpha(p.alpha)?;
        let pr = aggregate_all(tensor, &p.aug_weights)?;
        let sets = p.predict_sets(&pr, &rng);
        sizes.push(
            class_conditional_sizes(&sets, labels, k)?
                .into_iter()
                .map(|c| c.mean_size)
                .collect::<Vec<_>>(),
        );
        accuracy.push(class_accuracy(&pr, labels, k));
        top_k.push(TopK {
            predictor: name.clone(),
            alpha: p.alpha,
            k: optimal_top_k(&pr, labels, p.alpha)?,
        });
        probs.push(pr);
    }

    let reference = &predictors[0].0;
    let mut rank_shift = Vec::new();
    let mut correlations = Vec::new();
    let mut notices = Vec::new();
    for (j, (name, _)) in predictors.iter().enumerate().skip(1) {
        rank_shift.push(RankShift {
            predictor: name.clone(),
            reference: reference.clone(),
            bins: rank_shift_bins(&probs[0], &probs[j], labels, RANK_SHIFT_BINS)?,
        });
        let change: Vec<Option<f64>> = sizes[j].iter().zip(&sizes[0]).map(|(a, b)| Some((*a)? - (*b)?)).collect();
        let difficulty: Vec<Option<f64>> = accuracy[0].iter().map(|a| a.map(|v| 1.0 - v)).collect();
        let mut corr = |x: &[Option<f64>], what: &str| match present_class_correlation(x, &change) {
            Ok(c) => Some(c),
            Err(e) => {
                notices.push(format!("{name}: {what} correlation unavailable: {e}"));
                None
            }
        };
        let size_vs_change = corr(&sizes[0], "size");
        let difficulty_vs_change = corr(&difficulty, "difficulty");
        correlations.push(ClassCorrelation {
            predictor: name.clone(),
            size_vs_change,
            difficulty_vs_change,
        });
    }

    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    let classes = (0..k)
        .map(|c| ClassRow {
            class: c,
            count: counts[c],
            accuracy: accuracy.iter().map(|a| a[c]).collect(),
            mean_size: sizes.iter().map(|s| s[c]).collect(),
        })
        .collect();

    Ok(AnalysisReport {
        predictors: predictors.iter().map(|(n, _)| n.clone()).collect(),
        top_k,
        rank_shift,
        classes,
        correlations,
        notices,
    })
}
