//! Test-time-augmentation aggregation.
//!
//! Each example carries an `M × K` block of logits, one row per augmentation
//! (row 0 is the un-augmented input). A weight vector `θ` combines the rows
//! in logit space, `softmax(Σ_m θ_m z_m)`, and is learned by minimizing
//! cross-entropy on a held-out slice disjoint from the calibration examples.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::prob::{softmax_finite, ProbVector};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{LogitTensor, IDENTITY};

/// `|θ_m| < NEAR_ZERO_FRACTION · max |θ|` counts as an augmentation the
/// learner switched off.
pub const NEAR_ZERO_FRACTION: f64 = 0.05;

/// Per-augmentation aggregation weights `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugWeights<T> {
    weights: Vec<T>,
    names: Vec<String>,
}

impl<T: Scalar> AugWeights<T> {
    pub fn new(weights: Vec<T>, names: Vec<String>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("aggregation weights are empty"));
        }
        if weights.len() != names.len() {
            return Err(invalid(format!(
                "{} weights but {} augmentation names",
                weights.len(),
                names.len()
            )));
        }
        if let Some(m) = weights.iter().position(|w| !w.is_finite()) {
            return Err(invalid(format!("non-finite weight for augmentation {m}")));
        }
        Ok(Self { weights, names })
    }

    /// `θ = (1, 0, …, 0)`: the base classifier.
    pub fn identity(names: Vec<String>) -> Self {
        let mut weights = vec![T::zero(); names.len()];
        weights[0] = T::one();
        Self { weights, names }
    }

    /// Identity weights for a single-row (non-augmented) predictor.
    pub fn identity_only() -> Self {
        Self::identity(vec![IDENTITY.to_string()])
    }

    /// `θ = (1/M, …, 1/M)`.
    pub fn uniform(names: Vec<String>) -> Self {
        let m = T::of_usize(names.len());
        Self {
            weights: vec![T::one() / m; names.len()],
            names,
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True for `(1, 0, …, 0)` of any length.
    pub fn is_identity(&self) -> bool {
        self.weights[0] == T::one() && self.weights[1..].iter().all(|w| *w == T::zero())
    }

    /// Weights sized for a tensor with `n_augs` rows. Identity weights of any
    /// length widen to `n_augs`; anything else must already match.
    pub fn fit_to(&self, names: &[String]) -> Result<Self> {
        if self.len() == names.len() {
            return Ok(self.clone());
        }
        if self.is_identity() {
            return Ok(Self::identity(names.to_vec()));
        }
        Err(invalid(format!(
            "predictor has {} aggregation weights but the tensor has {} augmentations",
            self.len(),
            names.len()
        )))
    }

    /// Which augmentations carry a near-zero weight.
    pub fn near_zero(&self) -> Vec<bool> {
        let max = self.weights.iter().map(|w| w.abs()).fold(T::zero(), T::max);
        let cut = T::of(NEAR_ZERO_FRACTION) * max;
        self.weights.iter().map(|w| w.abs() < cut).collect()
    }
}

/// `softmax(Σ_m θ_m z_m)` for one example's row-major `M × K` logits.
pub fn aggregate<T: Scalar>(example_logits: &[T], theta: &AugWeights<T>) -> Result<ProbVector<T>> {
    let m = theta.len();
    if example_logits.is_empty() || !example_logits.len().is_multiple_of(m) {
        return Err(invalid(format!(
            "{} logits cannot be split into {m} augmentation rows",
            example_logits.len()
        )));
    }
    if example_logits.iter().any(|z| !z.is_finite()) {
        return Err(invalid("non-finite logit in aggregation input"));
    }
    Ok(softmax_finite(&weighted_logits(example_logits, theta.weights())))
}

/// Uniform logit average over augmentations.
pub fn tta_average<T: Scalar>(example_logits: &[T], n_augs: usize) -> Result<ProbVector<T>> {
    if n_augs == 0 {
        return Err(invalid("tta_average needs at least one augmentation"));
    }
    let names = (0..n_augs).map(|m| m.to_string()).collect();
    aggregate(example_logits, &AugWeights::uniform(names))
}

fn weighted_logits<T: Scalar>(example_logits: &[T], theta: &[T]) -> Vec<T> {
    let k = example_logits.len() / theta.len();
    let mut out = vec![T::zero(); k];
    for (row, &w) in example_logits.chunks_exact(k).zip(theta) {
        for (o, &z) in out.iter_mut().zip(row) {
            *o = *o + w * z;
        }
    }
    out
}

/// Aggregated probabilities for every example of a tensor.
pub fn aggregate_all<T: Scalar>(tensor: &LogitTensor<T>, theta: &AugWeights<T>) -> Result<Vec<ProbVector<T>>> {
    let theta = theta.fit_to(tensor.aug_names())?;
    Ok((0..tensor.n_examples())
        .map(|i| softmax_finite(&weighted_logits(tensor.example(i), theta.weights())))
        .collect())
}

/// Disjoint partition of validation positions into the weight-learning
/// slice and the calibration slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtaSplit {
    pub beta: f64,
    pub tta_indices: Vec<usize>,
    pub cal_indices: Vec<usize>,
}

/// Randomly assigns `round(β·n)` of `n_val` positions (at least one, at most
/// `n_val − 1`) to the weight-learning slice. Both index lists are ascending.
pub fn split_validation(n_val: usize, beta: f64, rng: &RngState) -> Result<TtaSplit> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(config(format!("beta must lie in (0, 1), got {beta}")));
    }
    if n_val < 2 {
        return Err(invalid(format!("cannot split {n_val} validation examples into two non-empty parts")));
    }
    let n_tta = ((n_val as f64 * beta).round() as usize).clamp(1, n_val - 1);
    let perm = rng.permutation(n_val);
    let mut tta_indices = perm[..n_tta].to_vec();
    let mut cal_indices = perm[n_tta..].to_vec();
    tta_indices.sort_unstable();
    cal_indices.sort_unstable();
    Ok(TtaSplit {
        beta,
        tta_indices,
        cal_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    UniformAverage,
    IdentityOnly,
}

/// SGD recipe for learning `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub init: WeightInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 50,
            batch_size: None,
            init: WeightInit::UniformAverage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(config("training needs at least one epoch"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == Some(0) {
            return Err(config("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub weights: AugWeights<T>,
    /// Mean cross-entropy over the whole slice, before training and after each epoch.
    pub loss_history: Vec<T>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn final_loss(&self) -> T {
        *self.loss_history.last().expect("history holds the initial loss")
    }
}

/// Mean cross-entropy of `softmax(θᵀA)` over `indices` and its gradient
/// `∂L/∂θ_m = mean_i (p_i − e_{y_i}) · z_{i,m}`.
pub fn loss_and_gradient<T: Scalar>(tensor: &LogitTensor<T>, indices: &[usize], theta: &[T]) -> (T, Vec<T>) {
    let k = tensor.n_classes();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); theta.len()];
    let mut residual = vec![T::zero(); k];
    for &i in indices {
        let block = tensor.example(i);
        let s = weighted_logits(block, theta);
        let max = s.iter().copied().fold(T::neg_infinity(), T::max);
        let total: T = s.iter().map(|&v| (v - max).exp()).sum();
        let label = tensor.label(i);
        loss = loss + (max + total.ln() - s[label]);
        for (r, &v) in residual.iter_mut().zip(&s) {
            *r = (v - max).exp() / total;
        }
        residual[label] = residual[label] - T::one();
        for (g, row) in grad.iter_mut().zip(block.chunks_exact(k)) {
            let dot: T = row.iter().zip(&residual).map(|(&z, &r)| z * r).sum();
            *g = *g + dot;
        }
    }
    let n = T::of_usize(indices.len());
    (loss / n, grad.into_iter().map(|g| g / n).collect())
}

/// Learns `θ` on `tta_indices` with momentum SGD and decoupled-from-loss
/// L2 weight decay (`g ← ∇L + λθ`, `b ← μb + g`, `θ ← θ − ηb`).
///
/// Only the listed examples are read.
pub fn train_weights<T: Scalar>(
    tensor: &LogitTensor<T>,
    tta_indices: &[usize],
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if tta_indices.is_empty() {
        return Err(invalid("weight learning needs at least one example"));
    }
    if let Some(&i) = tta_indices.iter().find(|&&i| i >= tensor.n_examples()) {
        return Err(invalid(format!("training index {i} out of range")));
    }
    let names = tensor.aug_names().to_vec();
    let init = match cfg.init {
        WeightInit::UniformAverage => AugWeights::<T>::uniform(names.clone()),
        WeightInit::IdentityOnly => AugWeights::<T>::identity(names.clone()),
    };
    let mut theta = init.weights;
    let mut velocity: Option<Vec<T>> = None;
    let lr = T::of(cfg.learning_rate);
    let mu = T::of(cfg.momentum);
    let wd = T::of(cfg.weight_decay);
    let batch = cfg.batch_size.unwrap_or(tta_indices.len()).min(tta_indices.len());

    let mut history = vec![loss_and_gradient(tensor, tta_indices, &theta).0];
    let mut order = tta_indices.to_vec();
    for epoch in 0..cfg.epochs {
        if batch < order.len() {
            order.shuffle(&mut rng.derive_indexed("epoch", epoch).generator());
        }
        for chunk in order.chunks(batch) {
            let (_, mut grad) = loss_and_gradient(tensor, chunk, &theta);
            for (g, &w) in grad.iter_mut().zip(&theta) {
                *g = *g + wd * w;
            }
            let v = match velocity.as_mut() {
                None => velocity.insert(grad),
                Some(v) => {
                    for (b, g) in v.iter_mut().zip(&grad) {
                        *b = mu * *b + *g;
                    }
                    v
                }
            };
            for (w, &b) in theta.iter_mut().zip(v.iter()) {
                *w = *w - lr * b;
            }
        }
        let loss = loss_and_gradient(tensor, tta_indices, &theta).0;
        if !loss.is_finite() || theta.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch,
                theta: theta.iter().map(|w| w.as_f64()).collect(),
            });
        }
        history.push(loss);
    }
    Ok(TrainOutcome {
        weights: AugWeights::new(theta, names)?,
        loss_history: history,
    })
}
