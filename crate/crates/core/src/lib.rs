//! Split conformal prediction on top of test-time augmentation.
//!
//! A [`LogitTensor`] holds logits for every example under every augmentation.
//! Augmentations are combined by a weighted sum of logits ([`AugWeights`]),
//! either uniform or learned on a held-out slice with [`train_weights`].
//! The aggregated probabilities are calibrated with APS or RAPS scores
//! ([`calibrate`]) and the resulting [`FittedPredictor`] emits prediction
//! sets with marginal coverage at least `1 − α`.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, which the harness uses throughout.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrator;
pub mod error;
pub mod eval;
pub mod harness;
pub mod io;
pub mod pipeline;
pub mod plan;
pub mod prob;
pub mod quantile;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod scores;
pub mod synth;
pub mod tensor;
pub mod tta;

pub use calibrator::{calibrate, predict_set, tune_raps, FittedPredictor, PredictionSet, RapsTuning};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use harness::{analyze, run, run_on, simulate, AnalysisReport, RunReport, SimulationReport};
pub use io::{read_tensor, write_tensor, FormatError, LogitFileHeader};
pub use pipeline::{fit_predictor, Method, ScoreChoice};
pub use plan::ExperimentPlan;
pub use prob::{rank_of_label, softmax, ProbVector};
pub use quantile::conformal_quantile;
pub use rng::RngState;
pub use scalar::Scalar;
pub use scores::{aps_score, raps_score, score, ScoreConfig, ScoreKind};
pub use synth::{generate, SynthConfig, TrialConfig};
pub use tensor::{LogitTensor, TensorError};
pub use tta::{aggregate, aggregate_all, split_validation, train_weights, AugWeights, TrainConfig, TrainOutcome};

pub type Probs = ProbVector<f64>;
pub type Logits = LogitTensor<f64>;
pub type Predictor = FittedPredictor<f64>;
pub type Weights = AugWeights<f64>;
