//! The episodic active-learning loop and its metrics.
//!
//! Each episode plans against the current model, collects one rollout on
//! the simulator, refits the model on all transitions so far and records
//! uncertainty metrics on a frozen evaluation set.

mod config;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_fit, Ensemble};
use crate::envs::{rollout, EnvSpec, TaskSpec};
use crate::planner::{MpcController, Objective, PlanMode, PlanSpec};
use crate::rewards::IntrinsicSpec;
use crate::statmodel::{calibration_coverage, Dataset, GpModel, StatModel};
use crate::{rng, Error, Result};

pub use config::{Backend, Baseline, DownstreamSpec, GpConfig, Lipschitz, ModelConfig, RunConfig};

// Stream labels under the run seed.
const EXPLORE: u64 = 1;
const ENV: u64 = 2;
const MODEL: u64 = 3;
const EVAL_SET: u64 = 4;
const EVAL: u64 = 5;

/// Metrics of one episode. Episode 0 is the random seed episode when
/// enabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub dataset_size: usize,
    /// Intrinsic reward of the executed trajectory under the pre-update model.
    pub intrinsic_return: f64,
    pub max_epistemic: f64,
    pub mean_epistemic: f64,
    /// `1/2 sum_t sum_j log(1 + sigma_j^2(z_t) / s^2)` over the episode's
    /// transitions, pre-update model.
    pub info_gain_bound: f64,
    /// Information the episode's observations carry under the pre-update GP;
    /// `None` for ensembles.
    pub info_gain: Option<f64>,
    pub model_complexity: f64,
    pub calibration_coverage: f64,
    /// One entry per downstream task; `None` when not evaluated this episode.
    pub downstream: Vec<Option<f64>>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub seed: u64,
    pub downstream_tasks: Vec<String>,
    pub episodes: Vec<EpisodeRecord>,
}

/// A fitted model of either backend.
pub enum FittedModel {
    Gp(GpModel),
    Ensemble(Ensemble),
}

impl FittedModel {
    pub fn as_dyn(&self) -> &dyn StatModel {
        match self {
            FittedModel::Gp(m) => m,
            FittedModel::Ensemble(m) => m,
        }
    }

    pub fn as_gp(&self) -> Option<&GpModel> {
        match self {
            FittedModel::Gp(m) => Some(m),
            FittedModel::Ensemble(_) => None,
        }
    }
}

/// Model before any data: the GP prior or an untrained ensemble.
pub fn prior_model(cfg: &RunConfig, seed: u64) -> Result<FittedModel> {
    let d = Dataset::new(cfg.env.obs_dim() + cfg.env.action_dim(), cfg.env.obs_dim());
    match cfg.model.backend {
        Backend::Gp => {
            let g = &cfg.model.gp;
            Ok(FittedModel::Gp(GpModel::fit(&d, g.kernel.clone(), g.noise_sigma, cfg.beta)?))
        }
        Backend::Ensemble => Ok(FittedModel::Ensemble(Ensemble::untrained(
            &cfg.model.ensemble,
            d.input_dim,
            d.output_dim,
            rng::derive_seed(seed, &[MODEL, u64::MAX]),
        )?)),
    }
}

/// Fits the configured backend on increments `obs' - obs`.
pub fn fit_model(cfg: &RunConfig, deltas: &Dataset, seed: u64, episode: usize) -> Result<FittedModel> {
    match cfg.model.backend {
        Backend::Gp => {
            let g = &cfg.model.gp;
            Ok(FittedModel::Gp(GpModel::fit_with_lengthscale_search(
                deltas,
                g.kernel.clone(),
                g.noise_sigma,
                cfg.beta,
                &g.lengthscale_search,
            )?))
        }
        Backend::Ensemble => {
            let mut ens = cfg.model.ensemble.clone();
            ens.beta = cfg.beta;
            Ok(FittedModel::Ensemble(ensemble_fit(deltas, &ens, rng::derive_seed(seed, &[MODEL, episode as u64]))?))
        }
    }
}

/// Max and mean over `eval_set` of the Euclidean norm of the epistemic std.
pub fn eval_epistemic(model: &dyn StatModel, eval_set: &[Vec<f64>]) -> Result<(f64, f64)> {
    if eval_set.is_empty() {
        return Err(Error::input("evaluation set is empty"));
    }
    let zs = DMatrix::from_fn(eval_set.len(), model.input_dim(), |i, j| eval_set[i][j]);
    let pred = model.predict_batch(&zs, true)?;
    let norms: Vec<f64> = pred.epistemic.row_iter().map(|r| r.norm()).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    Ok((max, norms.iter().sum::<f64>() / norms.len() as f64))
}

/// `sum_n sum_{z in D_n} ||sigma_{n-1}(z)||^2` from the epistemic std
/// vectors of each episode's points under its pre-update model.
pub fn model_complexity(per_episode: &[Vec<Vec<f64>>]) -> Result<f64> {
    if per_episode.is_empty() {
        return Err(Error::input("model complexity needs at least one episode"));
    }
    Ok(per_episode.iter().flatten().flatten().map(|s| s * s).sum())
}

/// Epistemic std vectors of the model at every input of `data`.
fn epistemic_rows(model: &dyn StatModel, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let pred = model.predict_batch(&data.inputs_matrix(), true)?;
    Ok(pred.epistemic.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Average task return of receding-horizon MPC with `plan` (mean or
/// true-environment propagation) executed on the simulator.
pub fn eval_downstream(
    model: &dyn StatModel,
    task: &TaskSpec,
    plan: &PlanSpec,
    env: &EnvSpec,
    episodes: usize,
    horizon: usize,
    rng: &mut rng::Rng,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::input("downstream evaluation needs at least one episode"));
    }
    let spec = PlanSpec { objective: Objective::Task(task.clone()), ..plan.clone() };
    let model = (spec.mode != PlanMode::TrueEnv).then_some(model);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut ctrl = MpcController::new(spec.clone(), model, env)?;
        let mut plan_rng = rng::stream(rng::fork(rng), &[]);
        let ro = rollout(env, |obs| ctrl.step(obs, &mut plan_rng), &env.initial_state(), horizon, rng)?;
        total += ro.states[..horizon].iter().zip(&ro.actions).map(|(x, u)| task.reward(x, u)).sum::<f64>();
    }
    Ok(total / episodes as f64)
}

/// Reward used to score executed trajectories.
fn reward_noise(cfg: &RunConfig) -> IntrinsicSpec {
    match (&cfg.explorer.objective, cfg.model.backend) {
        (Objective::Intrinsic(s), _) => *s,
        (_, Backend::Gp) => IntrinsicSpec::log_ratio(cfg.model.gp.noise_sigma),
        (_, Backend::Ensemble) => IntrinsicSpec::log_ratio(cfg.env.noise_sigma.max(1e-3)),
    }
}

/// The frozen evaluation inputs of a run and the true increments there.
fn eval_set(cfg: &RunConfig, seed: u64) -> (Vec<Vec<f64>>, Vec<(Vec<f64>, Vec<f64>)>) {
    let env = &cfg.env;
    let zs = env.reachable_sample(&mut rng::stream(seed, &[EVAL_SET]), cfg.eval_set_size);
    let truth = zs
        .iter()
        .map(|z| {
            let next = env.f_star_obs(z);
            let delta = next.iter().zip(z).map(|(a, b)| a - b).collect();
            (z.clone(), delta)
        })
        .collect();
    (zs, truth)
}

/// Metrics of a model refit on a stored dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_size: usize,
    pub max_epistemic: f64,
    pub mean_epistemic: f64,
    pub calibration_coverage: f64,
    pub downstream: Vec<f64>,
}

/// Refits the configured model on transitions `((obs, u), obs')` and
/// evaluates it on the run's evaluation set and every downstream task.
pub fn evaluate_dataset(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<EvalReport> {
    cfg.validate()?;
    let env = &cfg.env;
    if data.input_dim != env.obs_dim() + env.action_dim() || data.output_dim != env.obs_dim() {
        return Err(Error::input("dataset dimensions do not match the environment"));
    }
    let (zs, truth) = eval_set(cfg, seed);
    let model =
        if data.is_empty() { prior_model(cfg, seed)? } else { fit_model(cfg, &data.to_deltas(), seed, usize::MAX)? };
    let m = model.as_dyn();
    let (max_epistemic, mean_epistemic) = eval_epistemic(m, &zs)?;
    let calibration_coverage = calibration_coverage(m, &truth)?;
    let downstream = cfg
        .downstream
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = rng::stream(seed, &[EVAL, u64::MAX, i as u64]);
            eval_downstream(m, &d.task, &d.plan_spec(), env, d.episodes, d.horizon, &mut r)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { dataset_size: data.len(), max_epistemic, mean_epistemic, calibration_coverage, downstream })
}

/// Runs the active-learning loop for one seed.
pub fn run_active_learning(cfg: &RunConfig, seed: u64) -> Result<RunHistory> {
    Ok(run_active_learning_with_data(cfg, seed)?.0)
}

/// Like [`run_active_learning`], also returning every collected transition
/// `((obs, u), obs')` in collection order.
pub fn run_active_learning_with_data(cfg: &RunConfig, seed: u64) -> Result<(RunHistory, Dataset)> {
    cfg.validate()?;
    let env = &cfg.env;
    let (eval_set, truth) = eval_set(cfg, seed);
    let noise = reward_noise(cfg);
    // the bound is only comparable to the GP's information gain at its own noise level
    let bound_noise = match cfg.model.backend {
        Backend::Gp => cfg.model.gp.noise_sigma,
        Backend::Ensemble => noise.noise_sigma,
    };
    let explorer = cfg.explorer_spec();
    let random = PlanSpec::new(PlanMode::Random, explorer.objective.clone()).with_icem(explorer.icem.clone());
    let mut model = prior_model(cfg, seed)?;
    let mut deltas = Dataset::new(env.obs_dim() + env.action_dim(), env.obs_dim());
    let mut raw = deltas.clone();
    let mut complexity = 0.0;
    let mut history = RunHistory {
        seed,
        downstream_tasks: cfg.downstream.iter().map(DownstreamSpec::label).collect(),
        episodes: Vec::new(),
    };

    let first = if cfg.seed_episode { 0 } else { 1 };
    for n in first..=cfg.episodes {
        let start = Instant::now();
        let wrap = |e: Error| Error::Episode { episode: n, source: Box::new(e) };
        let spec = if n == 0 { &random } else { &explorer };
        let ro = {
            let m = model.as_dyn();
            let mut ctrl = MpcController::new(spec.clone(), Some(m), env).map_err(wrap)?;
            let mut plan_rng = rng::stream(seed, &[EXPLORE, n as u64]);
            let mut env_rng = rng::stream(seed, &[ENV, n as u64]);
            let x0 = env.reset_state(&mut env_rng);
            rollout(env, |obs| ctrl.step(obs, &mut plan_rng), &x0, cfg.horizon, &mut env_rng).map_err(wrap)?
        };
        let new = ro.data.to_deltas();

        // accounting under the pre-update model
        let sig = epistemic_rows(model.as_dyn(), &new).map_err(wrap)?;
        let intrinsic_return: f64 = sig.iter().map(|s| noise.reward(s)).sum();
        let s2 = bound_noise * bound_noise;
        let info_gain_bound: f64 = 0.5 * sig.iter().flatten().map(|s| (s * s / s2).ln_1p()).sum::<f64>();
        let info_gain = match model.as_gp() {
            Some(gp) => {
                Some(gp.conditional_information_gain(&new.inputs_matrix()).map_err(wrap)? * env.obs_dim() as f64)
            }
            None => None,
        };
        complexity += model_complexity(&[sig]).map_err(wrap)?;

        deltas.extend(&new).map_err(wrap)?;
        raw.extend(&ro.data).map_err(wrap)?;
        model = fit_model(cfg, &deltas, seed, n).map_err(wrap)?;
        let m = model.as_dyn();
        let (max_epistemic, mean_epistemic) = eval_epistemic(m, &eval_set).map_err(wrap)?;
        let coverage = calibration_coverage(m, &truth).map_err(wrap)?;

        let evaluate = n >= 1 && (n % cfg.eval_every == 0 || n == cfg.episodes);
        let mut downstream = Vec::with_capacity(cfg.downstream.len());
        for (i, d) in cfg.downstream.iter().enumerate() {
            downstream.push(if evaluate {
                let mut r = rng::stream(seed, &[EVAL, n as u64, i as u64]);
                Some(eval_downstream(m, &d.task, &d.plan_spec(), env, d.episodes, d.horizon, &mut r).map_err(wrap)?)
            } else {
                None
            });
        }

        history.episodes.push(EpisodeRecord {
            episode: n,
            dataset_size: deltas.len(),
            intrinsic_return,
            max_epistemic,
            mean_epistemic,
            info_gain_bound,
            info_gain,
            model_complexity: complexity,
            calibration_coverage: coverage,
            downstream,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((history, raw))
}
