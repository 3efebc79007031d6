//! Batched trajectory propagation for every planner mode.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_model, CandidatePlan, Objective, PlanMode, PlanSpec};
use crate::envs::EnvSpec;
use crate::rewards::trajectory_objective;
use crate::rng;
use crate::statmodel::StatModel;
use crate::{Error, Result};

/// Random inputs of one particle: standard-normal transition noise per step
/// and, for TS-1, the ensemble member it commits to.
struct Draw {
    eps: DMatrix<f64>,
    member: usize,
}

fn noise_dim(env: &EnvSpec) -> usize {
    env.obs_dim().max(env.state_dim())
}

fn members(spec: &PlanSpec, model: Option<&dyn StatModel>) -> usize {
    match (spec.mode, model.and_then(|m| m.as_ensemble())) {
        (PlanMode::Ts1, Some(e)) => e.len(),
        _ => 1,
    }
}

fn draw_particles(r: &mut rng::Rng, particles: usize, h: usize, nd: usize, members: usize) -> Vec<Draw> {
    (0..particles)
        .map(|_| {
            let eps = DMatrix::from_fn(h, nd, |_, _| StandardNormal.sample(&mut *r));
            let member = if members > 1 { r.random_range(0..members) } else { 0 };
            Draw { eps, member }
        })
        .collect()
}

/// Propagates every (plan, particle) row jointly. Row `r` belongs to plan
/// `r / particles`. Returns per-step rewards and, when `keep` is set, the
/// visited states of every row.
fn simulate(
    spec: &PlanSpec,
    model: Option<&dyn StatModel>,
    env: &EnvSpec,
    x0: &[f64],
    plans: &[DMatrix<f64>],
    draws: &[Vec<Draw>],
    keep: bool,
) -> Result<(DMatrix<f64>, Vec<Vec<Vec<f64>>>)> {
    let (dx, du) = (env.obs_dim(), env.action_dim());
    let h = plans[0].nrows();
    let np = draws[0].len();
    let rows = plans.len() * np;
    let need_ep = spec.mode == PlanMode::Optimistic || spec.objective.needs_epistemic();

    let mut s = DMatrix::from_fn(rows, dx, |_, j| x0[j]);
    let mut rewards = DMatrix::zeros(rows, h);
    let mut states: Vec<Vec<Vec<f64>>> = if keep { vec![vec![x0.to_vec()]; rows] } else { Vec::new() };
    let fail = |r: usize, e: Error| Error::Planning { candidate: r / np, source: Box::new(e) };

    for t in 0..h {
        let z = DMatrix::from_fn(rows, dx + du, |r, j| if j < dx { s[(r, j)] } else { plans[r / np][(t, j - dx)] });
        let mut next = s.clone();
        let mut ep = DMatrix::zeros(rows, dx);

        match spec.mode {
            PlanMode::Mean | PlanMode::Optimistic => {
                let m = model.expect("checked");
                let pred = m.predict_batch(&z, need_ep).map_err(|e| fail(0, e))?;
                for r in 0..rows {
                    let d = &draws[r / np][r % np];
                    for j in 0..dx {
                        let mut v = pred.mean[(r, j)] + pred.aleatoric[r] * d.eps[(t, j)];
                        if spec.mode == PlanMode::Optimistic {
                            v += spec.halluc_beta * pred.epistemic[(r, j)] * plans[r / np][(t, du + j)];
                        }
                        next[(r, j)] += v;
                    }
                }
                ep = pred.epistemic;
            }
            PlanMode::Ts1 => {
                let ens = model.and_then(|m| m.as_ensemble()).expect("checked");
                let k = ens.len();
                let mut sum = DMatrix::zeros(rows, dx);
                let mut sumsq = DMatrix::zeros(rows, dx);
                for idx in 0..k {
                    let (mk, sk) = ens.member_moments(idx, &z).map_err(|e| fail(0, e))?;
                    if need_ep {
                        sum += &mk;
                        sumsq += mk.component_mul(&mk);
                    }
                    for r in 0..rows {
                        let d = &draws[r / np][r % np];
                        if d.member == idx {
                            for j in 0..dx {
                                next[(r, j)] += mk[(r, j)] + sk[(r, j)] * d.eps[(t, j)];
                            }
                        }
                    }
                }
                if need_ep {
                    let kf = k as f64;
                    ep = DMatrix::from_fn(rows, dx, |r, j| {
                        let m = sum[(r, j)] / kf;
                        (sumsq[(r, j)] / kf - m * m).max(0.0).sqrt()
                    });
                }
            }
            PlanMode::TrueEnv => {
                let nsd = env.state_dim();
                for r in 0..rows {
                    let d = &draws[r / np][r % np];
                    let obs: Vec<f64> = s.row(r).iter().copied().collect();
                    let u: Vec<f64> = (0..du).map(|j| plans[r / np][(t, j)]).collect();
                    let noise: Vec<f64> = (0..nsd).map(|j| d.eps[(t, j)]).collect();
                    let x = env.step_with_noise(&env.state_from_obs(&obs), &u, &noise).map_err(|e| fail(r, e))?;
                    for (j, v) in env.observe(&x).into_iter().enumerate() {
                        next[(r, j)] = v;
                    }
                }
                if need_ep {
                    let m = model.expect("checked");
                    ep = m.predict_batch(&z, true).map_err(|e| fail(0, e))?.epistemic;
                }
            }
            PlanMode::Random => return Err(Error::input("random mode does not propagate")),
        }

        for r in 0..rows {
            let obs: Vec<f64> = s.row(r).iter().copied().collect();
            let u: Vec<f64> = (0..du).map(|j| plans[r / np][(t, j)]).collect();
            rewards[(r, t)] = match &spec.objective {
                Objective::Intrinsic(i) => i.reward(&ep.row(r).iter().copied().collect::<Vec<_>>()),
                Objective::Task(task) => task.reward(&env.state_from_obs(&obs), &u),
                Objective::Custom(f) => (f.0)(&obs, &u),
            };
        }
        for r in 0..rows {
            if next.row(r).iter().any(|v| !v.is_finite()) {
                return Err(fail(r, Error::Simulation(format!("non-finite predicted state at step {t}"))));
            }
        }
        s = next;
        if keep {
            for (r, st) in states.iter_mut().enumerate() {
                st.push(s.row(r).iter().copied().collect());
            }
        }
    }
    Ok((rewards, states))
}

/// Values of `plans` (real units); plan `i` is candidate `first + i` and
/// draws its particles from the stream `(seed, first + i)`.
pub(super) fn evaluate_chunk(
    spec: &PlanSpec,
    model: Option<&dyn StatModel>,
    env: &EnvSpec,
    x0: &[f64],
    plans: &[DMatrix<f64>],
    seed: u64,
    first: usize,
) -> Result<Vec<f64>> {
    let np = spec.icem.num_particles;
    let h = plans[0].nrows();
    let (nd, k) = (noise_dim(env), members(spec, model));
    let draws: Vec<Vec<Draw>> =
        (0..plans.len()).map(|i| draw_particles(&mut rng::stream(seed, &[(first + i) as u64]), np, h, nd, k)).collect();
    let shift = |e: Error| match e {
        Error::Planning { candidate, source } => Error::Planning { candidate: candidate + first, source },
        other => Error::Planning { candidate: first, source: Box::new(other) },
    };
    let (rewards, _) = simulate(spec, model, env, x0, plans, &draws, false).map_err(shift)?;
    plans
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut total = 0.0;
            for p in 0..np {
                let row: Vec<f64> = rewards.row(i * np + p).iter().copied().collect();
                total += trajectory_objective(&row, spec.aggregation)?;
            }
            Ok(total / np as f64)
        })
        .collect()
}

/// One particle trajectory (`H + 1` observations, starting at `x0`) of
/// `plan` under the propagation mode of `spec`.
pub fn propagate(
    spec: &PlanSpec,
    model: Option<&dyn StatModel>,
    env: &EnvSpec,
    x0: &[f64],
    plan: &CandidatePlan,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    check_model(spec, model, env)?;
    let width = spec.plan_width(env);
    if plan.actions.ncols() != width || plan.actions.nrows() == 0 {
        return Err(Error::input(format!(
            "{:?} propagation needs a plan with {} columns, got {:?}",
            spec.mode,
            width,
            plan.actions.shape()
        )));
    }
    if x0.len() != env.obs_dim() {
        return Err(Error::input(format!("initial observation must have dimension {}", env.obs_dim())));
    }
    let h = plan.actions.nrows();
    let seed = rng::fork(rng);
    let draws = vec![draw_particles(&mut rng::stream(seed, &[0]), 1, h, noise_dim(env), members(spec, model))];
    let (_, mut states) = simulate(spec, model, env, x0, std::slice::from_ref(&plan.actions), &draws, true)?;
    Ok(states.pop().expect("one row"))
}
