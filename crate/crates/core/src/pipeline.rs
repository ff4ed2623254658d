//! The per-split protocol shared by experiments and Monte Carlo trials:
//! choose aggregation weights for a method, then fit a conformal predictor
//! on the calibration slice.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibrator::{calibrate, tune_raps, FittedPredictor, RapsTuning, RAPS_TUNING_FRACTION};
use crate::error::{config, Result};
use crate::prob::ProbVector;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::scores::ScoreConfig;
use crate::tensor::LogitTensor;
use crate::tta::{train_weights, AugWeights, TrainConfig};

/// How probabilities are formed from the augmented logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Softmax of the identity row.
    Baseline,
    /// Uniform logit average over augmentations.
    TtaAvg,
    /// Weights learned on the weight-learning slice.
    TtaLearned,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::TtaAvg, Method::TtaLearned];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::TtaAvg => "tta-avg",
            Method::TtaLearned => "tta-learned",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "tta-avg" | "tta_avg" => Ok(Method::TtaAvg),
            "tta-learned" | "tta_learned" => Ok(Method::TtaLearned),
            other => Err(config(format!("unknown method {other:?} (expected baseline, tta-avg, tta-learned)"))),
        }
    }
}

/// Which conformal score an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreChoice {
    Aps,
    Raps { k_reg: usize, lambda: f64 },
    /// RAPS with `k_reg` and `λ` tuned on the leading slice of the calibration data.
    RapsAuto,
}

impl ScoreChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreChoice::Aps => "APS",
            ScoreChoice::Raps { .. } | ScoreChoice::RapsAuto => "RAPS",
        }
    }
}

/// Aggregation weights for `method`, learning on `tta_indices` of `val` when needed.
pub fn method_weights<T: Scalar>(
    method: Method,
    val: &LogitTensor<T>,
    tta_indices: &[usize],
    train: &TrainConfig,
    rng: &RngState,
) -> Result<AugWeights<T>> {
    let names = val.aug_names().to_vec();
    match method {
        Method::Baseline => Ok(AugWeights::identity(names)),
        Method::TtaAvg => Ok(AugWeights::uniform(names)),
        Method::TtaLearned => Ok(train_weights(val, tta_indices, train, rng)?.weights),
    }
}

/// A calibrated predictor plus the RAPS tuning outcome when tuning ran.
#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub predictor: FittedPredictor<T>,
    pub tuning: Option<RapsTuning>,
}

/// Calibrates on `(probs, labels)`. For [`ScoreChoice::RapsAuto`] the first
/// 30% of the examples tune RAPS and only the remainder set the threshold.
pub fn fit_predictor<T: Scalar>(
    probs: &[ProbVector<T>],
    labels: &[usize],
    alpha: f64,
    score: ScoreChoice,
    rng: &RngState,
) -> Result<Fit<T>> {
    match score {
        ScoreChoice::Aps => Ok(Fit {
            predictor: calibrate(probs, labels, alpha, ScoreConfig::aps(), rng)?,
            tuning: None,
        }),
        ScoreChoice::Raps { k_reg, lambda } => Ok(Fit {
            predictor: calibrate(probs, labels, alpha, ScoreConfig::raps(k_reg, lambda)?, rng)?,
            tuning: None,
        }),
        ScoreChoice::RapsAuto => {
            let n_tune = ((probs.len() as f64 * RAPS_TUNING_FRACTION).round() as usize).min(probs.len().saturating_sub(1));
            let tuning = tune_raps(&probs[..n_tune], &labels[..n_tune], alpha, &rng.derive("raps"))?;
            Ok(Fit {
                predictor: calibrate(&probs[n_tune..], &labels[n_tune..], alpha, tuning.config, rng)?,
                tuning: Some(tuning),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use crate::tta::aggregate_all;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("best".parse::<Method>().is_err());
    }

    #[test]
    fn raps_auto_reserves_the_tuning_slice() {
        let t = generate(&SynthConfig {
            n_examples: 300,
            ..SynthConfig::default()
        })
        .unwrap();
        let probs = aggregate_all(&t, &AugWeights::identity(t.aug_names().to_vec())).unwrap();
        let fit = fit_predictor(&probs, t.labels(), 0.1, ScoreChoice::RapsAuto, &RngState::new(1)).unwrap();
        assert_eq!(fit.predictor.n_cal, 210);
        assert!(fit.tuning.is_some_and(|t| !t.fallback));
        assert!(fit.predictor.score_config.is_raps());
    }

    #[test]
    fn baseline_and_average_weights() {
        let t = generate(&SynthConfig::default()).unwrap();
        let rng = RngState::new(0);
        let cfg = TrainConfig::default();
        let b = method_weights(Method::Baseline, &t, &[], &cfg, &rng).unwrap();
        assert!(b.is_identity());
        let a = method_weights(Method::TtaAvg, &t, &[], &cfg, &rng).unwrap();
        assert_eq!(a.weights(), &[0.25; 4]);
        assert!(method_weights(Method::TtaLearned, &t, &[], &cfg, &rng).is_err());
    }
}
