use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::envs::{EnvSpec, TaskSpec};
use crate::planner::{ICemParams, Objective, PlanMode, PlanSpec};
use crate::statmodel::KernelSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Gp,
    Ensemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub kernel: KernelSpec,
    pub noise_sigma: f64,
    /// Lengthscale multipliers tried at every refit (highest marginal
    /// likelihood wins). Empty keeps the configured lengthscales, which
    /// keeps the kernel fixed across episodes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lengthscale_search: Vec<f64>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { kernel: KernelSpec::rbf(1.0, 1.0), noise_sigma: 0.01, lengthscale_search: Vec::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

/// Smoothness constants of the analysis; recorded, never used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lipschitz {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_pi: Option<f64>,
}

/// A zero-shot task solved by MPC on the learned mean model (`mean`) or on
/// the simulator (`true_env`, reference only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSpec {
    pub task: TaskSpec,
    #[serde(default = "default_downstream_mode")]
    pub mode: PlanMode,
    #[serde(default)]
    pub icem: ICemParams,
    #[serde(default = "one")]
    pub episodes: usize,
    #[serde(default = "default_downstream_horizon")]
    pub horizon: usize,
}

impl DownstreamSpec {
    pub fn new(task: TaskSpec, icem: ICemParams) -> Self {
        DownstreamSpec { task, mode: PlanMode::Mean, icem, episodes: 1, horizon: default_downstream_horizon() }
    }

    /// Column name in outputs: the task name, suffixed for simulator-backed
    /// reference runs.
    pub fn label(&self) -> String {
        match self.mode {
            PlanMode::TrueEnv => format!("{}_true_env", self.task.name()),
            _ => self.task.name().to_string(),
        }
    }

    pub fn plan_spec(&self) -> PlanSpec {
        PlanSpec::new(self.mode, Objective::Task(self.task.clone())).with_icem(self.icem.clone())
    }
}

fn default_downstream_mode() -> PlanMode {
    PlanMode::Mean
}

fn default_downstream_horizon() -> usize {
    200
}

fn one() -> usize {
    1
}

fn default_eval_every() -> usize {
    2
}

fn default_eval_set_size() -> usize {
    2000
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_delta() -> f64 {
    0.05
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub model: ModelConfig,
    /// Exploration planner. For optimistic exploration the hallucination
    /// scale is `beta`; the explorer's own `halluc_beta` is ignored.
    pub explorer: PlanSpec,
    /// Exploration episodes after the seed episode.
    pub episodes: usize,
    /// Steps per exploration episode.
    pub horizon: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_set_size")]
    pub eval_set_size: usize,
    #[serde(default)]
    pub downstream: Vec<DownstreamSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Confidence multiplier: calibration width of the model and scale of
    /// the hallucinated control.
    pub beta: f64,
    #[serde(default)]
    pub lipschitz: Lipschitz,
    /// Collect one episode of uniformly random actions (episode 0) before
    /// exploring.
    #[serde(default = "yes")]
    pub seed_episode: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.env.validate()?;
        if self.episodes < 1 {
            return bad("episodes must be >= 1".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        if self.eval_every < 1 {
            return bad("eval_every must be >= 1".into());
        }
        if self.eval_set_size < 1 {
            return bad("eval_set_size must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        match self.model.backend {
            Backend::Gp => {
                self.model.gp.kernel.validate()?;
                if !(self.model.gp.noise_sigma > 0.0) {
                    return bad("model.gp.noise_sigma must be positive".into());
                }
                if self.explorer.mode == PlanMode::Ts1 {
                    return bad("ts1 exploration needs the ensemble backend".into());
                }
            }
            Backend::Ensemble => self.model.ensemble.validate()?,
        }
        self.explorer_spec().validate()?;
        if let Objective::Task(t) = &self.explorer.objective {
            if t.env_kind() != self.env.kind {
                return bad(format!("explorer task {} does not match env {:?}", t.name(), self.env.kind));
            }
        }
        for d in &self.downstream {
            if !matches!(d.mode, PlanMode::Mean | PlanMode::TrueEnv) {
                return bad(format!("downstream {} must use mean or true_env mode", d.task.name()));
            }
            if d.task.env_kind() != self.env.kind {
                return bad(format!("downstream task {} does not match env {:?}", d.task.name(), self.env.kind));
            }
            if d.episodes < 1 || d.horizon < 1 {
                return bad(format!("downstream {} needs episodes and horizon >= 1", d.task.name()));
            }
            d.plan_spec().validate()?;
        }
        Ok(())
    }

    /// The explorer with its hallucination scale set to `beta`.
    pub fn explorer_spec(&self) -> PlanSpec {
        let mut s = self.explorer.clone();
        if s.mode == PlanMode::Optimistic {
            s.halluc_beta = self.beta;
        }
        s
    }
}

/// Exploration strategies compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Optimistic hallucinated-control planning.
    Opax,
    /// Intrinsic reward along the mean prediction.
    MeanAe,
    /// Intrinsic reward with TS-1 trajectory sampling.
    PetsAe,
    Random,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Opax, Baseline::MeanAe, Baseline::PetsAe, Baseline::Random];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Opax => "opax",
            Baseline::MeanAe => "mean_ae",
            Baseline::PetsAe => "pets_ae",
            Baseline::Random => "random",
        }
    }

    pub fn mode(self) -> PlanMode {
        match self {
            Baseline::Opax => PlanMode::Optimistic,
            Baseline::MeanAe => PlanMode::Mean,
            Baseline::PetsAe => PlanMode::Ts1,
            Baseline::Random => PlanMode::Random,
        }
    }

    /// The strategy an exploration mode corresponds to, if any.
    pub fn from_mode(mode: PlanMode) -> Option<Baseline> {
        Baseline::ALL.into_iter().find(|b| b.mode() == mode)
    }

    /// Switches the explorer of `cfg` to this strategy.
    pub fn apply(self, cfg: &mut RunConfig) {
        cfg.explorer.mode = self.mode();
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}; expected opax, mean_ae, pets_ae or random")))
    }
}
