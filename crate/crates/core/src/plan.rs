//! Experiment plans, loadable from a TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrator::check_alpha;
use crate::error::{config, Error, Result};
use crate::pipeline::{Method, ScoreChoice};
use crate::tta::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub tensor: PathBuf,
    pub alphas: Vec<f64>,
    pub score: ScoreChoice,
    pub methods: Vec<Method>,
    /// Fraction of the validation half that learns aggregation weights.
    pub beta: f64,
    pub n_splits: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Keeps this fraction of each validation half (calibration-size sweeps).
    pub val_fraction: f64,
    pub train: TrainConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            tensor: PathBuf::new(),
            alphas: vec![0.01, 0.05, 0.1],
            score: ScoreChoice::RapsAuto,
            methods: Method::ALL.to_vec(),
            beta: 0.2,
            n_splits: 10,
            seed: 0,
            output_dir: PathBuf::from("results"),
            val_fraction: 1.0,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(config("at least one alpha is required"));
        }
        for &a in &self.alphas {
            check_alpha(a)?;
        }
        if self.methods.is_empty() {
            return Err(config("at least one method is required"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(config("methods may not repeat"));
        }
        if self.n_splits == 0 {
            return Err(config("n_splits must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return Err(config(format!("val_fraction must lie in (0, 1], got {}", self.val_fraction)));
        }
        self.train.validate()
    }

    /// Methods in canonical order (baseline first).
    pub fn ordered_methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let p = ExperimentPlan::default();
        assert_eq!(p.alphas, vec![0.01, 0.05, 0.1]);
        assert_eq!(p.beta, 0.2);
        assert_eq!(p.n_splits, 10);
        assert_eq!(p.train.epochs, 50);
    }

    #[test]
    fn parses_a_document() {
        let text = r#"
            tensor = "data/imagenet.ttac"
            alphas = [0.1]
            methods = ["baseline", "tta-learned"]
            seed = 7
            n_splits = 3

            [score]
            kind = "raps"
            k_reg = 2
            lambda = 0.01

            [train]
            learning_rate = 0.01
            momentum = 0.9
            weight_decay = 0.0001
            epochs = 20
            init = "uniform_average"
        "#;
        let p = ExperimentPlan::from_toml(text).unwrap();
        assert_eq!(p.methods, vec![Method::Baseline, Method::TtaLearned]);
        assert_eq!(p.score, ScoreChoice::Raps { k_reg: 2, lambda: 0.01 });
        assert_eq!(p.train.epochs, 20);
        assert_eq!(p.beta, 0.2);
        p.validate().unwrap();
        assert_eq!(ExperimentPlan::from_toml(&p.to_toml().unwrap()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(ExperimentPlan::from_toml("bogus = 1").is_err());
        let bad = |f: fn(&mut ExperimentPlan)| {
            let mut p = ExperimentPlan::default();
            f(&mut p);
            p.validate().is_err()
        };
        assert!(bad(|p| p.alphas = vec![1.5]));
        assert!(bad(|p| p.alphas.clear()));
        assert!(bad(|p| p.methods.clear()));
        assert!(bad(|p| p.methods = vec![Method::Baseline, Method::Baseline]));
        assert!(bad(|p| p.n_splits = 0));
        assert!(bad(|p| p.beta = 1.0));
        assert!(bad(|p| p.val_fraction = 0.0));
    }
}
