//! Synthetic exchangeable logit tensors and Monte Carlo coverage trials.
//!
//! Augmentation `m` of an example with label `y` has logits
//! `signal[m] · SIGNAL_SCALE · e_y + noise[m] · ε`, `ε ~ N(0, I)`, drawn
//! i.i.d. across examples. When `signal[m] = noise[m]²` that row's softmax is
//! the exact posterior under uniform labels.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrator::check_alpha;
use crate::error::{config, Result};
use crate::eval::coverage;
use crate::pipeline::{fit_predictor, method_weights, Method, ScoreChoice};
use crate::quantile::conformal_rank;
use crate::rng::RngState;
use crate::tensor::{default_aug_names, LogitTensor};
use crate::tta::{aggregate_all, split_validation, TrainConfig};

pub const SIGNAL_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDistribution {
    Uniform,
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub n_classes: usize,
    /// One entry per augmentation; row 0 is the identity view.
    pub signal_strength: Vec<f64>,
    pub noise_scale: Vec<f64>,
    pub label_distribution: LabelDistribution,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_examples: 2000,
            n_classes: 10,
            signal_strength: vec![2.25; 4],
            noise_scale: vec![1.5; 4],
            label_distribution: LabelDistribution::Uniform,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_augs(&self) -> usize {
        self.signal_strength.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 || self.n_classes < 2 || self.signal_strength.is_empty() {
            return Err(config("synthetic data needs n_examples ≥ 1, n_classes ≥ 2, and at least one augmentation"));
        }
        if self.noise_scale.len() != self.signal_strength.len() {
            return Err(config(format!(
                "{} signal strengths but {} noise scales",
                self.signal_strength.len(),
                self.noise_scale.len()
            )));
        }
        if self.noise_scale.iter().chain(&self.signal_strength).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(config("signal strengths and noise scales must be finite and non-negative"));
        }
        if let LabelDistribution::Weights(w) = &self.label_distribution {
            if w.len() != self.n_classes || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(config("label weights must be K non-negative values with a positive sum"));
            }
        }
        Ok(())
    }
}

/// Draws a tensor from `config`, seeded by `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<LogitTensor<f64>> {
    generate_from(config, &RngState::new(config.seed).derive("synth"))
}

/// Draws a tensor from `config` using the stream `rng` (ignores `config.seed`).
pub fn generate_from(config: &SynthConfig, rng: &RngState) -> Result<LogitTensor<f64>> {
    config.validate()?;
    let (n, m, k) = (config.n_examples, config.n_augs(), config.n_classes);
    let mut gen = rng.generator();
    let weighted = match &config.label_distribution {
        LabelDistribution::Uniform => None,
        LabelDistribution::Weights(w) => Some(WeightedIndex::new(w).map_err(|e| crate::error::config(e.to_string()))?),
    };
    let mut labels = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n * m * k);
    for _ in 0..n {
        let y = match &weighted {
            None => gen.random_range(0..k),
            Some(w) => w.sample(&mut gen),
        };
        labels.push(y);
        for aug in 0..m {
            for class in 0..k {
                let eps: f64 = StandardNormal.sample(&mut gen);
                let signal = if class == y { config.signal_strength[aug] * SIGNAL_SCALE } else { 0.0 };
                logits.push(signal + config.noise_scale[aug] * eps);
            }
        }
    }
    Ok(LogitTensor::with_aug_names(n, k, logits, labels, default_aug_names(m))?)
}

/// Shape of one Monte Carlo coverage trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub alpha: f64,
    pub score: ScoreChoice,
    pub method: Method,
    /// Validation examples per trial; `β` of them learn weights, the rest calibrate.
    pub n_val: usize,
    pub n_test: usize,
    pub beta: f64,
    pub n_trials: usize,
    pub train: TrainConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            score: ScoreChoice::Aps,
            method: Method::Baseline,
            n_val: 625,
            n_test: 500,
            beta: 0.2,
            n_trials: 200,
            train: TrainConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.n_trials == 0 {
            return Err(config("at least one trial is required"));
        }
        if self.n_test == 0 {
            return Err(config("trials need at least one test example"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.n_val < 2 {
            return Err(config("trials need at least two validation examples"));
        }
        self.train.validate()
    }

    /// Calibration examples per trial after the weight-learning split.
    pub fn n_cal(&self) -> usize {
        let n_tta = ((self.n_val as f64 * self.beta).round() as usize).clamp(1, self.n_val - 1);
        self.n_val - n_tta
    }
}

/// Which slice learns the weights. Only the calibration-slice variant, used
/// as a negative control in tests, breaks exchangeability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WeightSource {
    TtaSlice,
    #[cfg_attr(not(test), allow(dead_code))]
    CalibrationSlice,
}

/// Test-set coverage of `trial.n_trials` independent trials, in trial order.
pub fn coverage_trial(config: &SynthConfig, trial: &TrialConfig, rng: &RngState) -> Result<Vec<f64>> {
    run_trials(config, trial, rng, WeightSource::TtaSlice)
}

fn run_trials(config: &SynthConfig, trial: &TrialConfig, rng: &RngState, source: WeightSource) -> Result<Vec<f64>> {
    config.validate()?;
    trial.validate()?;
    (0..trial.n_trials)
        .into_par_iter()
        .map(|t| one_trial(config, trial, &rng.derive_indexed("trial", t), source))
        .collect()
}

fn one_trial(config: &SynthConfig, trial: &TrialConfig, rng: &RngState, source: WeightSource) -> Result<f64> {
    let data = generate_from(
        &SynthConfig {
            n_examples: trial.n_val + trial.n_test,
            ..config.clone()
        },
        &rng.derive("data"),
    )?;
    let val_idx: Vec<usize> = (0..trial.n_val).collect();
    let test_idx: Vec<usize> = (trial.n_val..trial.n_val + trial.n_test).collect();
    let val = data.select(&val_idx);
    let test = data.select(&test_idx);
    let split = split_validation(trial.n_val, trial.beta, &rng.derive("tta-split"))?;
    let learn_on = match source {
        WeightSource::TtaSlice => &split.tta_indices,
        WeightSource::CalibrationSlice => &split.cal_indices,
    };
    let weights = method_weights(trial.method, &val, learn_on, &trial.train, &rng.derive("init"))?;
    let cal = val.select(&split.cal_indices);
    let cal_probs = aggregate_all(&cal, &weights)?;
    let fit = fit_predictor(&cal_probs, cal.labels(), trial.alpha, trial.score, rng)?;
    let test_probs = aggregate_all(&test, &weights)?;
    let sets = fit.predictor.predict_sets(&test_probs, rng);
    coverage(&sets, test.labels())
}

/// CDF parameters `(a, b)` of the conditional coverage law
/// `Beta(⌈(n+1)(1−α)⌉, n + 1 − ⌈(n+1)(1−α)⌉)`.
pub fn coverage_beta_parameters(n_cal: usize, alpha: f64) -> (f64, f64) {
    let k = conformal_rank(n_cal, alpha).min(n_cal);
    (k as f64, (n_cal + 1 - k) as f64)
}

/// Guarantee band `[1 − α, 1 − α + 1/(n_cal + 1)]` for mean coverage.
pub fn coverage_band(n_cal: usize, alpha: f64) -> (f64, f64) {
    (1.0 - alpha, 1.0 - alpha + 1.0 / (n_cal as f64 + 1.0))
}
