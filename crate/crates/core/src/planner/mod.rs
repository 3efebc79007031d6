//! Sampling-based trajectory optimization.
//!
//! iCEM with colored-noise sampling over a model-propagated objective. All
//! models consumed here predict state *increments*: the next observation is
//! `obs + mean(obs, u)`.
//!
//! Sequences are sampled in a normalized space where every column lives in
//! `[-1, 1]`; action columns are mapped affinely onto the action bounds,
//! hallucination columns (optimistic mode) are used as they are.

mod noise;
mod propagate;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, TaskSpec};
use crate::rewards::{Aggregation, IntrinsicSpec};
use crate::rng;
use crate::statmodel::StatModel;
use crate::{Error, Result};

pub use noise::{colored_noise, colored_noise_batch};
pub use propagate::propagate;

/// Candidates evaluated together in one batched propagation. Fixed so that
/// results do not depend on the number of worker threads.
const CHUNK: usize = 16;
const STD_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Mean plus hallucinated control inside the confidence band.
    Optimistic,
    Mean,
    /// One ensemble member per particle for the whole horizon.
    Ts1,
    Random,
    /// Propagates through the simulator itself.
    TrueEnv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ICemParams {
    pub num_samples: usize,
    pub horizon: usize,
    pub elite_size: usize,
    pub cn_exponent: f64,
    pub num_particles: usize,
    pub cem_iterations: usize,
    /// Initial sampling std in normalized units.
    pub init_std: f64,
    pub momentum: f64,
    pub frac_elites_reused: f64,
    pub use_mean_actions: bool,
    pub shift_elites: bool,
    pub keep_elites: bool,
}

impl Default for ICemParams {
    fn default() -> Self {
        ICemParams {
            num_samples: 500,
            horizon: 20,
            elite_size: 50,
            cn_exponent: 0.25,
            num_particles: 10,
            cem_iterations: 10,
            init_std: 0.5,
            momentum: 0.1,
            frac_elites_reused: 0.3,
            use_mean_actions: true,
            shift_elites: true,
            keep_elites: true,
        }
    }
}

impl ICemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.num_samples == 0 || self.elite_size == 0 || self.elite_size > self.num_samples {
            return bad(format!(
                "need 1 <= elite_size <= num_samples, got {} and {}",
                self.elite_size, self.num_samples
            ));
        }
        if self.horizon == 0 || self.cem_iterations == 0 || self.num_particles == 0 {
            return bad("horizon, cem_iterations and num_particles must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.frac_elites_reused) {
            return bad(format!("frac_elites_reused must be in [0, 1], got {}", self.frac_elites_reused));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.init_std > 0.0) || !self.cn_exponent.is_finite() {
            return bad("init_std must be positive and cn_exponent finite".into());
        }
        Ok(())
    }

    /// Number of elites carried over, `ceil(xi * K)`.
    pub fn reused(&self) -> usize {
        (self.frac_elites_reused * self.elite_size as f64).ceil() as usize
    }
}

/// Per-step reward `r(obs, u)` supplied by the caller.
#[derive(Clone)]
pub struct StepRewardFn(pub Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>);

impl StepRewardFn {
    pub fn new(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        StepRewardFn(Arc::new(f))
    }
}

impl fmt::Debug for StepRewardFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StepRewardFn(..)")
    }
}

impl PartialEq for StepRewardFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// What the planner maximizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Intrinsic(IntrinsicSpec),
    Task(TaskSpec),
    #[serde(skip)]
    Custom(StepRewardFn),
}

impl Objective {
    pub fn needs_epistemic(&self) -> bool {
        matches!(self, Objective::Intrinsic(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub mode: PlanMode,
    #[serde(default)]
    pub icem: ICemParams,
    pub objective: Objective,
    /// Confidence multiplier applied to the hallucinated control.
    #[serde(default)]
    pub halluc_beta: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl PlanSpec {
    pub fn new(mode: PlanMode, objective: Objective) -> Self {
        PlanSpec { mode, icem: ICemParams::default(), objective, halluc_beta: 0.0, aggregation: Aggregation::Sum }
    }

    pub fn with_icem(mut self, icem: ICemParams) -> Self {
        self.icem = icem;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.halluc_beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.icem.validate()?;
        if self.mode == PlanMode::Optimistic && !(self.halluc_beta >= 0.0) {
            return Err(Error::config(format!("optimistic mode needs halluc_beta >= 0, got {}", self.halluc_beta)));
        }
        if let Objective::Intrinsic(s) = &self.objective {
            s.validate()?;
        }
        Ok(())
    }

    fn needs_model(&self) -> bool {
        match self.mode {
            PlanMode::Optimistic | PlanMode::Mean | PlanMode::Ts1 => true,
            PlanMode::TrueEnv => self.objective.needs_epistemic(),
            PlanMode::Random => false,
        }
    }

    /// Plan columns: `du`, plus `dx` hallucination columns when optimistic.
    pub fn plan_width(&self, env: &EnvSpec) -> usize {
        match self.mode {
            PlanMode::Optimistic => env.action_dim() + env.obs_dim(),
            _ => env.action_dim(),
        }
    }
}

/// An action sequence in real units (`H x du_eff`) and its estimated value.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePlan {
    pub actions: DMatrix<f64>,
    pub value: f64,
}

impl CandidatePlan {
    /// First control, without hallucination columns.
    pub fn first_action(&self, du: usize) -> Vec<f64> {
        (0..du).map(|j| self.actions[(0, j)]).collect()
    }
}

/// Bookkeeping of one CEM round.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub candidates: usize,
    /// Worst elite value.
    pub elite_min: f64,
    /// Best value outside the elite set (`-inf` when every candidate is an elite).
    pub non_elite_max: f64,
    pub best_so_far: f64,
}

pub(crate) fn check_model(spec: &PlanSpec, model: Option<&dyn StatModel>, env: &EnvSpec) -> Result<()> {
    if !spec.needs_model() {
        return Ok(());
    }
    let Some(m) = model else {
        return Err(Error::input(format!("{:?} planning needs a model", spec.mode)));
    };
    let (dx, du) = (env.obs_dim(), env.action_dim());
    if m.input_dim() != dx + du || m.output_dim() != dx {
        return Err(Error::input(format!(
            "model maps {} -> {} but the environment needs {} -> {}",
            m.input_dim(),
            m.output_dim(),
            dx + du,
            dx
        )));
    }
    if spec.mode == PlanMode::Ts1 && m.as_ensemble().is_none() {
        return Err(Error::input("ts1 propagation needs an ensemble model"));
    }
    Ok(())
}

/// Receding-horizon iCEM controller with warm starts.
pub struct MpcController<'a> {
    spec: PlanSpec,
    model: Option<&'a dyn StatModel>,
    env: EnvSpec,
    /// Sampling mean in normalized units, `H x du_eff`.
    mean: DMatrix<f64>,
    /// Elites of the previous call, already shifted by one step.
    shifted: Vec<DMatrix<f64>>,
    /// Normalized action columns held fixed during optimization.
    fixed_actions: Option<DMatrix<f64>>,
    trace: Vec<IterationStats>,
}

impl<'a> MpcController<'a> {
    pub fn new(spec: PlanSpec, model: Option<&'a dyn StatModel>, env: &EnvSpec) -> Result<Self> {
        spec.validate()?;
        env.validate()?;
        check_model(&spec, model, env)?;
        let mean = DMatrix::zeros(spec.icem.horizon, spec.plan_width(env));
        Ok(MpcController {
            spec,
            model,
            env: env.clone(),
            mean,
            shifted: Vec::new(),
            fixed_actions: None,
            trace: Vec::new(),
        })
    }

    pub fn spec(&self) -> &PlanSpec {
        &self.spec
    }

    /// Optimizes only the hallucination columns, holding the action
    /// sequence (real units, `H x du`) fixed.
    pub fn with_fixed_actions(mut self, actions: &DMatrix<f64>) -> Result<Self> {
        let du = self.env.action_dim();
        if actions.shape() != (self.spec.icem.horizon, du) {
            return Err(Error::input(format!(
                "fixed actions must be {}x{}, got {:?}",
                self.spec.icem.horizon,
                du,
                actions.shape()
            )));
        }
        let (lo, hi) = (&self.env.action_low, &self.env.action_high);
        let norm = DMatrix::from_fn(actions.nrows(), du, |t, j| {
            (2.0 * (actions[(t, j)] - lo[j]) / (hi[j] - lo[j]) - 1.0).clamp(-1.0, 1.0)
        });
        self.fixed_actions = Some(norm);
        Ok(self)
    }

    /// Statistics of every CEM round of the most recent `plan` call.
    pub fn trace(&self) -> &[IterationStats] {
        &self.trace
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.mean.fill(0.0);
        self.shifted.clear();
    }

    fn to_real(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let du = self.env.action_dim();
        let (lo, hi) = (&self.env.action_low, &self.env.action_high);
        DMatrix::from_fn(a.nrows(), a.ncols(), |t, j| {
            if j < du {
                lo[j] + (a[(t, j)] + 1.0) * 0.5 * (hi[j] - lo[j])
            } else {
                a[(t, j)]
            }
        })
    }

    fn pin(&self, a: &mut DMatrix<f64>) {
        a.apply(|v| *v = v.clamp(-1.0, 1.0));
        if let Some(fixed) = &self.fixed_actions {
            a.columns_mut(0, fixed.ncols()).copy_from(fixed);
        }
    }

    fn random_plan(&self, rng: &mut impl Rng) -> CandidatePlan {
        let h = self.spec.icem.horizon;
        let a = DMatrix::from_fn(h, self.env.action_dim(), |_, _| rng.random_range(-1.0..=1.0));
        CandidatePlan { actions: self.to_real(&a), value: 0.0 }
    }

    /// Values of normalized candidates; candidate `i` uses the noise stream
    /// `(seed, i)`.
    fn evaluate(&self, x0: &[f64], pool: &[DMatrix<f64>], seed: u64) -> Result<Vec<f64>> {
        let real: Vec<DMatrix<f64>> = pool.iter().map(|a| self.to_real(a)).collect();
        evaluate_batch(&self.spec, self.model, &self.env, x0, &real, seed)
    }

    /// Runs the CEM rounds from `x` and returns the best candidate seen.
    ///
    /// Elite reuse follows the iCEM scheme: the first round re-evaluates the
    /// best `ceil(xi K)` elites of the previous call (shifted one step,
    /// `shift_elites`); later rounds re-evaluate the best `ceil(xi K)` elites
    /// of the round before (`keep_elites`). The current mean joins every
    /// round when `use_mean_actions` is set.
    pub fn plan(&mut self, x: &[f64], rng: &mut impl Rng) -> Result<CandidatePlan> {
        self.trace.clear();
        if x.len() != self.env.obs_dim() {
            return Err(Error::input(format!(
                "planner expects an observation of dimension {}, got {}",
                self.env.obs_dim(),
                x.len()
            )));
        }
        if self.spec.mode == PlanMode::Random {
            return Ok(self.random_plan(rng));
        }
        let p = &self.spec.icem;
        let (h, w) = (p.horizon, self.mean.ncols());
        let reuse = p.reused();
        let master = rng::fork(rng);

        let mut std = DMatrix::from_element(h, w, p.init_std);
        let mut kept: Vec<DMatrix<f64>> =
            if p.shift_elites { self.shifted.iter().take(reuse).cloned().collect() } else { Vec::new() };
        let mut best: Option<(DMatrix<f64>, f64)> = None;

        for it in 0..p.cem_iterations {
            let noise = colored_noise_batch(p.cn_exponent, h, w, p.num_samples, rng);
            let mut pool: Vec<DMatrix<f64>> = noise
                .into_iter()
                .map(|n| {
                    let mut a = &self.mean + std.component_mul(&n);
                    self.pin(&mut a);
                    a
                })
                .collect();
            pool.append(&mut kept);
            if p.use_mean_actions {
                let mut m = self.mean.clone();
                self.pin(&mut m);
                pool.push(m);
            }

            let values = self.evaluate(x, &pool, rng::derive_seed(master, &[it as u64]))?;
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&i, &j| rank(values[j]).total_cmp(&rank(values[i])).then(i.cmp(&j)));
            let k = p.elite_size.min(pool.len());
            let elites: Vec<&DMatrix<f64>> = order[..k].iter().map(|&i| &pool[i]).collect();

            let top = order[0];
            if best.as_ref().is_none_or(|(_, v)| rank(values[top]) > rank(*v)) {
                best = Some((pool[top].clone(), values[top]));
            }
            self.trace.push(IterationStats {
                iteration: it,
                candidates: pool.len(),
                elite_min: values[order[k - 1]],
                non_elite_max: order.get(k).map_or(f64::NEG_INFINITY, |&i| values[i]),
                best_so_far: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1),
            });

            let (new_mean, new_std) = moments(&elites);
            self.mean = &self.mean * p.momentum + new_mean * (1.0 - p.momentum);
            std = &std * p.momentum + new_std * (1.0 - p.momentum);
            std.apply(|s| *s = s.max(STD_FLOOR));

            let carried: Vec<DMatrix<f64>> = order[..reuse.min(k)].iter().map(|&i| pool[i].clone()).collect();
            if it + 1 == p.cem_iterations {
                self.shifted = carried.iter().map(shift_one).collect();
            } else if p.keep_elites {
                kept = carried;
            }
        }

        let (a, value) = best.expect("at least one CEM round");
        Ok(CandidatePlan { actions: self.to_real(&a), value })
    }

    /// Plans from `x`, returns the first control and shifts the warm start.
    pub fn step(&mut self, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let du = self.env.action_dim();
        if self.spec.mode == PlanMode::Random {
            let lo = &self.env.action_low;
            let hi = &self.env.action_high;
            return Ok((0..du).map(|j| rng.random_range(lo[j]..=hi[j])).collect());
        }
        let plan = self.plan(x, rng)?;
        self.mean = shift_one(&self.mean);
        Ok(self.env.clip_action(&plan.first_action(du)))
    }
}

/// NaN values rank below everything else.
fn rank(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn moments(elites: &[&DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = elites.len() as f64;
    let mut mean = DMatrix::zeros(elites[0].nrows(), elites[0].ncols());
    for e in elites {
        mean += *e;
    }
    mean /= n;
    let mut var = DMatrix::zeros(mean.nrows(), mean.ncols());
    for e in elites {
        let d = *e - &mean;
        var += d.component_mul(&d);
    }
    var /= n;
    (mean, var.map(f64::sqrt))
}

/// Drops the first row and repeats the last.
fn shift_one(a: &DMatrix<f64>) -> DMatrix<f64> {
    let h = a.nrows();
    DMatrix::from_fn(h, a.ncols(), |t, j| a[((t + 1).min(h - 1), j)])
}

fn evaluate_batch(
    spec: &PlanSpec,
    model: Option<&dyn StatModel>,
    env: &EnvSpec,
    x0: &[f64],
    plans: &[DMatrix<f64>],
    seed: u64,
) -> Result<Vec<f64>> {
    let chunks: Vec<Result<Vec<f64>>> = plans
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| propagate::evaluate_chunk(spec, model, env, x0, chunk, seed, c * CHUNK))
        .collect();
    let mut out = Vec::with_capacity(plans.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Objective values of `plans` (real units, `H x plan_width`) from `x0`,
/// averaged over `num_particles` particles. Plan `i` draws its particles
/// from the stream `(seed, i)`, so two specs evaluated with the same seed
/// see the same transition noise.
pub fn evaluate_plans(
    spec: &PlanSpec,
    model: Option<&dyn StatModel>,
    env: &EnvSpec,
    x0: &[f64],
    plans: &[DMatrix<f64>],
    seed: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    check_model(spec, model, env)?;
    if x0.len() != env.obs_dim() {
        return Err(Error::input(format!("initial observation must have dimension {}", env.obs_dim())));
    }
    let Some(first) = plans.first() else {
        return Ok(Vec::new());
    };
    let (h, width) = (first.nrows(), spec.plan_width(env));
    if let Some(bad) = plans.iter().find(|a| a.ncols() != width || a.nrows() != h || h == 0) {
        return Err(Error::input(format!(
            "{:?} plans must share a nonzero horizon and have {} columns, got {:?}",
            spec.mode,
            width,
            bad.shape()
        )));
    }
    evaluate_batch(spec, model, env, x0, plans, seed)
}

pub fn icem_plan(
    spec: &PlanSpec,
    model: Option<&dyn StatModel>,
    env: &EnvSpec,
    x0: &[f64],
    rng: &mut impl Rng,
) -> Result<CandidatePlan> {
    MpcController::new(spec.clone(), model, env)?.plan(x0, rng)
}

pub fn mpc_step(ctrl: &mut MpcController<'_>, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    ctrl.step(x, rng)
}

#[cfg(test)]
mod tests;
