//! Intrinsic exploration rewards.
//!
//! The main reward `sum_j log(1 + sigma_j^2 / s^2)` trades epistemic against
//! aleatoric uncertainty; `sum_j sigma_j^2` is the plain disagreement
//! alternative. Both are computed per step and aggregated over a trajectory.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicKind {
    LogRatio,
    SumSq,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicSpec {
    pub kind: IntrinsicKind,
    /// Aleatoric noise level `s` in the log-ratio reward.
    pub noise_sigma: f64,
}

impl IntrinsicSpec {
    pub fn log_ratio(noise_sigma: f64) -> Self {
        IntrinsicSpec { kind: IntrinsicKind::LogRatio, noise_sigma }
    }

    pub fn sum_sq() -> Self {
        IntrinsicSpec { kind: IntrinsicKind::SumSq, noise_sigma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == IntrinsicKind::LogRatio && !(self.noise_sigma > 0.0) {
            return Err(Error::config(format!(
                "log-ratio reward needs a positive noise sigma, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Per-step reward for an epistemic standard-deviation vector.
    pub fn reward(&self, epistemic: &[f64]) -> f64 {
        match self.kind {
            IntrinsicKind::LogRatio => {
                let s2 = self.noise_sigma * self.noise_sigma;
                epistemic.iter().map(|e| (e * e / s2).ln_1p()).sum()
            }
            IntrinsicKind::SumSq => epistemic.iter().map(|e| e * e).sum(),
        }
    }
}

/// `sum_j log(1 + epistemic_j^2 / s^2)`.
pub fn exploration_reward(spec: &IntrinsicSpec, epistemic: &[f64]) -> Result<f64> {
    spec.validate()?;
    Ok(IntrinsicSpec::log_ratio(spec.noise_sigma).reward(epistemic))
}

/// `sum_j epistemic_j^2`.
pub fn exploration_reward_sum(epistemic: &[f64]) -> f64 {
    IntrinsicSpec::sum_sq().reward(epistemic)
}

/// How step rewards are folded into one trajectory value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Best,
}

pub fn trajectory_objective(rewards: &[f64], mode: Aggregation) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::input("trajectory objective needs at least one step"));
    }
    Ok(match mode {
        Aggregation::Sum => rewards.iter().sum(),
        Aggregation::Best => rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
