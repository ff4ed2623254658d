//! APS and RAPS conformal scores.
//!
//! For a class `y`, APS is `ρ(y) + u·π(y)` where `ρ(y)` is the probability
//! mass of every class ranked ahead of `y`. RAPS adds `λ·max(0, rank(y) − k_reg)`.
//! Ranking follows [`ProbVector::class_order`]: descending probability, ties
//! resolved toward the lower class index.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::prob::ProbVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreKind {
    Aps,
    Raps { k_reg: usize, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    /// Whether the `u·π(y)` term uses a uniform draw. When false, `u = 1`
    /// and the score is the inclusive cumulative mass.
    pub randomized: bool,
}

impl ScoreConfig {
    pub fn aps() -> Self {
        Self {
            kind: ScoreKind::Aps,
            randomized: true,
        }
    }

    pub fn raps(k_reg: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(config(format!("RAPS lambda must be finite and non-negative, got {lambda}")));
        }
        Ok(Self {
            kind: ScoreKind::Raps { k_reg, lambda },
            randomized: true,
        })
    }

    pub fn deterministic(mut self) -> Self {
        self.randomized = false;
        self
    }

    pub fn is_raps(&self) -> bool {
        matches!(self.kind, ScoreKind::Raps { .. })
    }

    /// The draw actually used in the score.
    pub fn effective_u<T: Scalar>(&self, u: T) -> T {
        if self.randomized {
            u
        } else {
            T::one()
        }
    }

    /// Upper bound on any score this configuration can produce for `K` classes.
    pub fn max_score(&self, n_classes: usize) -> f64 {
        match self.kind {
            ScoreKind::Aps => 1.0,
            ScoreKind::Raps { k_reg, lambda } => 1.0 + lambda * n_classes.saturating_sub(k_reg) as f64,
        }
    }
}

fn rank_penalty<T: Scalar>(rank: usize, k_reg: usize, lambda: f64) -> T {
    T::of(lambda) * T::of_usize(rank.saturating_sub(k_reg))
}

/// Cumulative mass ahead of `label` plus `u·π(label)`.
pub fn aps_score<T: Scalar>(probs: &ProbVector<T>, label: usize, u: T) -> T {
    let (rho, _) = mass_ahead(probs, label);
    rho + u * probs.as_slice()[label]
}

/// APS score plus `λ·max(0, rank − k_reg)`.
pub fn raps_score<T: Scalar>(probs: &ProbVector<T>, label: usize, u: T, config: &ScoreConfig) -> Result<T> {
    let ScoreKind::Raps { k_reg, lambda } = config.kind else {
        return Err(crate::error::config("raps_score called with a non-RAPS configuration"));
    };
    let (rho, rank) = mass_ahead(probs, label);
    Ok(rho + u * probs.as_slice()[label] + rank_penalty(rank, k_reg, lambda))
}

/// Score of `label` under `config` with draw `u` (before [`ScoreConfig::effective_u`]).
pub fn score<T: Scalar>(probs: &ProbVector<T>, label: usize, u: T, config: &ScoreConfig) -> T {
    let u = config.effective_u(u);
    match config.kind {
        ScoreKind::Aps => aps_score(probs, label, u),
        ScoreKind::Raps { k_reg, lambda } => {
            let (rho, rank) = mass_ahead(probs, label);
            rho + u * probs.as_slice()[label] + rank_penalty(rank, k_reg, lambda)
        }
    }
}

/// Scores of every class with one shared draw `u`.
pub fn score_all_classes<T: Scalar>(probs: &ProbVector<T>, u: T, config: &ScoreConfig) -> Vec<T> {
    let u = config.effective_u(u);
    let p = probs.as_slice();
    let mut out = vec![T::zero(); p.len()];
    let mut rho = T::zero();
    for (pos, &class) in probs.class_order().iter().enumerate() {
        let mut s = rho + u * p[class];
        if let ScoreKind::Raps { k_reg, lambda } = config.kind {
            s = s + rank_penalty(pos + 1, k_reg, lambda);
        }
        out[class] = s;
        rho = rho + p[class];
    }
    out
}

/// (mass ranked ahead of `label`, 1-based rank of `label`), accumulated in class order.
fn mass_ahead<T: Scalar>(probs: &ProbVector<T>, label: usize) -> (T, usize) {
    let p = probs.as_slice();
    assert!(label < p.len(), "label {label} out of range for {} classes", p.len());
    let mut rho = T::zero();
    for (pos, &class) in probs.class_order().iter().enumerate() {
        if class == label {
            return (rho, pos + 1);
        }
        rho = rho + p[class];
    }
    unreachable!("label is one of the classes")
}
