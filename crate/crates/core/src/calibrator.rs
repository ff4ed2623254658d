//! Split-conformal calibration and prediction-set construction.

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::prob::{rank_of_label, ProbVector};
use crate::quantile::{conformal_quantile, empirical_quantile};
use crate::rng::{RngState, CALIBRATION_U, TEST_U};
use crate::scalar::Scalar;
use crate::scores::{score, score_all_classes, ScoreConfig};
use crate::tta::AugWeights;

/// λ candidates searched by [`tune_raps`], ascending.
pub const LAMBDA_GRID: [f64; 6] = [0.001, 0.01, 0.1, 0.2, 0.5, 1.0];
/// Below this many tuning examples [`tune_raps`] returns [`RAPS_FALLBACK`].
pub const MIN_TUNING_EXAMPLES: usize = 20;
/// `(k_reg, λ)` used when there is too little tuning data.
pub const RAPS_FALLBACK: (usize, f64) = (5, 0.01);
/// Leading fraction of the calibration slice consumed by RAPS tuning.
pub const RAPS_TUNING_FRACTION: f64 = 0.3;

const PREDICTOR_FORMAT: &str = "tta-conformal-predictor";
const PREDICTOR_VERSION: u32 = 1;

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// A calibrated conformal classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPredictor<T> {
    pub score_config: ScoreConfig,
    pub alpha: f64,
    /// Threshold; classes scoring strictly below it enter the set.
    pub q_hat: T,
    pub aug_weights: AugWeights<T>,
    pub n_cal: usize,
}

/// Classes in a prediction set, ascending. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn from_members(mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("prediction sets may not be empty"));
        }
        members.sort_unstable();
        members.dedup();
        Ok(Self { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn set_size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }
}

fn check_labels<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize]) -> Result<()> {
    if probs.is_empty() {
        return Err(invalid("no calibration examples"));
    }
    if probs.len() != labels.len() {
        return Err(invalid(format!("{} probability vectors but {} labels", probs.len(), labels.len())));
    }
    if let Some((i, (p, &y))) = probs.iter().zip(labels).enumerate().find(|(_, (p, &y))| y >= p.n_classes()) {
        return Err(invalid(format!("label {y} at example {i} is out of range for {} classes", p.n_classes())));
    }
    Ok(())
}

/// Calibration scores `c(x_i, y_i)` with `u_i` from the `calibration-u` stream of `rng`.
pub fn calibration_scores<T: Scalar>(
    cal_probs: &[ProbVector<T>],
    cal_labels: &[usize],
    score_config: &ScoreConfig,
    rng: &RngState,
) -> Result<Vec<T>> {
    check_labels(cal_probs, cal_labels)?;
    let us = rng.derive(CALIBRATION_U).uniforms(cal_probs.len());
    Ok(cal_probs
        .iter()
        .zip(cal_labels)
        .zip(us)
        .map(|((p, &y), u)| score(p, y, T::of(u), score_config))
        .collect())
}

/// Fits the threshold `q̂`: the ⌈(n+1)(1−α)⌉-th smallest calibration score,
/// or `+∞` when that rank exceeds `n`.
pub fn calibrate<T: Scalar>(
    cal_probs: &[ProbVector<T>],
    cal_labels: &[usize],
    alpha: f64,
    score_config: ScoreConfig,
    rng: &RngState,
) -> Result<FittedPredictor<T>> {
    check_alpha(alpha)?;
    let scores = calibration_scores(cal_probs, cal_labels, &score_config, rng)?;
    Ok(FittedPredictor {
        score_config,
        alpha,
        q_hat: conformal_quantile(&scores, alpha)?,
        aug_weights: AugWeights::identity_only(),
        n_cal: cal_probs.len(),
    })
}

impl<T: Scalar> FittedPredictor<T> {
    pub fn with_weights(mut self, weights: AugWeights<T>) -> Self {
        self.aug_weights = weights;
        self
    }

    /// Set for one example with an explicit draw `u`.
    pub fn predict_with_u(&self, probs: &ProbVector<T>, u: T) -> PredictionSet {
        let scores = score_all_classes(probs, u, &self.score_config);
        let members: Vec<usize> = (0..scores.len()).filter(|&y| scores[y] < self.q_hat).collect();
        if members.is_empty() {
            PredictionSet {
                members: vec![probs.argmax()],
            }
        } else {
            PredictionSet { members }
        }
    }

    /// Sets for a batch; example `i` uses the `i`-th draw of the `test-u` stream.
    pub fn predict_sets(&self, probs: &[ProbVector<T>], rng: &RngState) -> Vec<PredictionSet> {
        let us = rng.derive(TEST_U).uniforms(probs.len());
        probs.iter().zip(us).map(|(p, u)| self.predict_with_u(p, T::of(u))).collect()
    }
}

/// Set for a single example, using the first draw of the `test-u` stream.
pub fn predict_set<T: Scalar>(predictor: &FittedPredictor<T>, probs: &ProbVector<T>, rng: &RngState) -> PredictionSet {
    let u = rng.derive(TEST_U).uniforms(1)[0];
    predictor.predict_with_u(probs, T::of(u))
}

/// Outcome of RAPS hyperparameter selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RapsTuning {
    pub config: ScoreConfig,
    /// True when the defaults were used because tuning data was scarce.
    pub fallback: bool,
    /// Mean set size of the chosen λ on the internal evaluation half.
    pub mean_size: Option<f64>,
}

/// Chooses `k_reg` and `λ` for RAPS.
///
/// `k_reg` is the (1−α) empirical quantile of true-label ranks plus one. `λ`
/// is the grid value with the smallest mean set size when calibrating on one
/// random half of the tuning data and predicting on the other; ties go to the
/// larger λ.
pub fn tune_raps<T: Scalar>(
    tune_probs: &[ProbVector<T>],
    tune_labels: &[usize],
    alpha: f64,
    rng: &RngState,
) -> Result<RapsTuning> {
    check_alpha(alpha)?;
    if tune_probs.len() < MIN_TUNING_EXAMPLES {
        log::warn!(
            "RAPS tuning has {} examples (< {MIN_TUNING_EXAMPLES}); using k_reg={}, lambda={}",
            tune_probs.len(),
            RAPS_FALLBACK.0,
            RAPS_FALLBACK.1
        );
        return Ok(RapsTuning {
            config: ScoreConfig::raps(RAPS_FALLBACK.0, RAPS_FALLBACK.1)?,
            fallback: true,
            mean_size: None,
        });
    }
    check_labels(tune_probs, tune_labels)?;
    let k_reg = select_k_reg(tune_probs, tune_labels, alpha)?;

    let perm = rng.derive("raps-tune").permutation(tune_probs.len());
    let (cal_idx, eval_idx) = perm.split_at(perm.len() / 2);
    let pick = |idx: &[usize]| -> (Vec<ProbVector<T>>, Vec<usize>) {
        (idx.iter().map(|&i| tune_probs[i].clone()).collect(), idx.iter().map(|&i| tune_labels[i]).collect())
    };
    let (cal_p, cal_y) = pick(cal_idx);
    let (eval_p, _) = pick(eval_idx);

    let mut best: Option<(f64, ScoreConfig)> = None;
    for lambda in LAMBDA_GRID {
        let cfg = ScoreConfig::raps(k_reg, lambda)?;
        let fitted = calibrate(&cal_p, &cal_y, alpha, cfg, rng)?;
        let sets = fitted.predict_sets(&eval_p, rng);
        let mean = sets.iter().map(|s| s.set_size() as f64).sum::<f64>() / sets.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| mean <= *b) {
            best = Some((mean, cfg));
        }
    }
    let (mean, config) = best.expect("grid is non-empty");
    Ok(RapsTuning {
        config,
        fallback: false,
        mean_size: Some(mean),
    })
}

/// (1−α) empirical quantile of 1-based true-label ranks, plus one.
pub fn select_k_reg<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize], alpha: f64) -> Result<usize> {
    check_labels(probs, labels)?;
    let ranks: Vec<f64> = probs.iter().zip(labels).map(|(p, &y)| rank_of_label(p, y) as f64).collect();
    Ok(empirical_quantile(&ranks, 1.0 - alpha)? as usize + 1)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreDoc {
    kind: String,
    randomized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_reg: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsDoc {
    names: Vec<String>,
    theta: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorDoc {
    format: String,
    version: u32,
    alpha: f64,
    q_hat: f64,
    n_cal: usize,
    score: ScoreDoc,
    weights: WeightsDoc,
}

impl<T: Scalar> FittedPredictor<T> {
    /// Versioned TOML document; every float is written in shortest
    /// round-trip form, so reloading is bit-exact.
    pub fn to_document(&self) -> Result<String> {
        let score = match self.score_config.kind {
            crate::scores::ScoreKind::Aps => ScoreDoc {
                kind: "aps".into(),
                randomized: self.score_config.randomized,
                k_reg: None,
                lambda: None,
            },
            crate::scores::ScoreKind::Raps { k_reg, lambda } => ScoreDoc {
                kind: "raps".into(),
                randomized: self.score_config.randomized,
                k_reg: Some(k_reg),
                lambda: Some(lambda),
            },
        };
        let doc = PredictorDoc {
            format: PREDICTOR_FORMAT.into(),
            version: PREDICTOR_VERSION,
            alpha: self.alpha,
            q_hat: self.q_hat.as_f64(),
            n_cal: self.n_cal,
            score,
            weights: WeightsDoc {
                names: self.aug_weights.names().to_vec(),
                theta: self.aug_weights.weights().iter().map(|w| w.as_f64()).collect(),
            },
        };
        toml::to_string(&doc).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let doc: PredictorDoc = toml::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        if doc.format != PREDICTOR_FORMAT {
            return Err(Error::Document(format!("unexpected format tag {:?}", doc.format)));
        }
        if doc.version != PREDICTOR_VERSION {
            return Err(Error::Document(format!("unsupported predictor version {}", doc.version)));
        }
        check_alpha(doc.alpha)?;
        if !(doc.q_hat >= 0.0) {
            return Err(Error::Document(format!("q_hat must be non-negative, got {}", doc.q_hat)));
        }
        let mut score_config = match (doc.score.kind.as_str(), doc.score.k_reg, doc.score.lambda) {
            ("aps", None, None) => ScoreConfig::aps(),
            ("raps", Some(k), Some(l)) => ScoreConfig::raps(k, l)?,
            (kind, ..) => {
                return Err(Error::Document(format!(
                    "score kind {kind:?} with inconsistent RAPS fields"
                )))
            }
        };
        score_config.randomized = doc.score.randomized;
        let weights = AugWeights::new(doc.weights.theta.into_iter().map(T::of).collect(), doc.weights.names)?;
        Ok(Self {
            score_config,
            alpha: doc.alpha,
            q_hat: T::of(doc.q_hat),
            aug_weights: weights,
            n_cal: doc.n_cal,
        })
    }
}
