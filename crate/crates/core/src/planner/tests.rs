use nalgebra::DMatrix;
use rand::Rng;

use super::*;
use crate::envs::{rollout, TaskKind, TrueModel};
use crate::rng;
use crate::statmodel::{gp_fit, GpModel, KernelSpec};

fn quadratic_spec(iterations: usize, use_mean: bool) -> PlanSpec {
    let icem = ICemParams {
        num_samples: 500,
        horizon: 1,
        elite_size: 50,
        num_particles: 1,
        cem_iterations: iterations,
        use_mean_actions: use_mean,
        ..ICemParams::default()
    };
    let obj = Objective::Custom(StepRewardFn::new(|_, u| -(u[0] - 0.3).powi(2)));
    PlanSpec::new(PlanMode::TrueEnv, obj).with_icem(icem)
}

fn noiseless_pendulum() -> EnvSpec {
    EnvSpec::pendulum().with_noise(0.0)
}

fn small_icem(h: usize) -> ICemParams {
    ICemParams {
        num_samples: 40,
        horizon: h,
        elite_size: 8,
        num_particles: 2,
        cem_iterations: 3,
        ..ICemParams::default()
    }
}

fn pendulum_gp(env: &EnvSpec, n: usize, seed: u64) -> GpModel {
    let mut r = rng::stream(seed, &[]);
    let data =
        rollout(env, |_| Ok(vec![r.random_range(-2.0..2.0)]), &env.initial_state(), n, &mut rng::stream(seed, &[1]))
            .unwrap()
            .data
            .to_deltas();
    gp_fit(&data, KernelSpec::rbf(1.0, 1.0), 0.05, 2.0).unwrap()
}

#[test]
fn quadratic_optimum_recovered() {
    let env = noiseless_pendulum();
    let plan =
        icem_plan(&quadratic_spec(3, true), None, &env, &env.observe(&env.initial_state()), &mut rng::stream(0, &[]))
            .unwrap();
    assert!((plan.actions[(0, 0)] - 0.3).abs() < 0.02, "{}", plan.actions[(0, 0)]);
}

#[test]
fn single_round_returns_best_sample() {
    let env = noiseless_pendulum();
    let spec = quadratic_spec(1, false);
    let x0 = env.observe(&env.initial_state());
    let mut ctrl = MpcController::new(spec, None, &env).unwrap();
    let plan = ctrl.plan(&x0, &mut rng::stream(1, &[])).unwrap();
    let stats = &ctrl.trace()[0];
    assert_eq!(stats.candidates, 500);
    assert_eq!(plan.value, stats.best_so_far);
    assert!((plan.value + (plan.actions[(0, 0)] - 0.3).powi(2)).abs() < 1e-12);
}

#[test]
fn elite_ordering_and_monotone_best() {
    let env = noiseless_pendulum();
    let spec = PlanSpec::new(PlanMode::TrueEnv, Objective::Task(TaskSpec::new(TaskKind::PendulumSwingup)))
        .with_icem(ICemParams { cem_iterations: 6, ..small_icem(10) });
    let mut ctrl = MpcController::new(spec, None, &env).unwrap();
    ctrl.plan(&env.observe(&env.initial_state()), &mut rng::stream(2, &[])).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for s in ctrl.trace() {
        assert!(s.elite_min >= s.non_elite_max);
        assert!(s.best_so_far >= prev);
        prev = s.best_so_far;
    }
}

#[test]
fn zero_hallucination_equals_mean() {
    let env = EnvSpec::pendulum();
    let gp = pendulum_gp(&env, 30, 3);
    let h = 8;
    let mut r = rng::stream(4, &[]);
    let actions = DMatrix::from_fn(h, 1, |_, _| r.random_range(-2.0..2.0));
    let mut opt_actions = DMatrix::zeros(h, 1 + env.obs_dim());
    opt_actions.column_mut(0).copy_from(&actions.column(0));

    let mean_spec = PlanSpec::new(PlanMode::Mean, Objective::Intrinsic(IntrinsicSpec::log_ratio(0.05)));
    let opt_spec = PlanSpec { mode: PlanMode::Optimistic, halluc_beta: 2.0, ..mean_spec.clone() };
    let x0 = env.observe(&env.initial_state());
    let a =
        propagate(&mean_spec, Some(&gp), &env, &x0, &CandidatePlan { actions, value: 0.0 }, &mut rng::stream(5, &[]))
            .unwrap();
    let b = propagate(
        &opt_spec,
        Some(&gp),
        &env,
        &x0,
        &CandidatePlan { actions: opt_actions, value: 0.0 },
        &mut rng::stream(5, &[]),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_uncertainty_ignores_hallucination() {
    let env = EnvSpec::point_mass();
    let model = TrueModel::new(env.clone());
    let h = 6;
    let mut r = rng::stream(6, &[]);
    let opt = DMatrix::from_fn(h, 2 + env.obs_dim(), |_, _| r.random_range(-1.0..1.0));
    let actions = opt.columns(0, 2).into_owned();
    let mean_spec = PlanSpec::new(PlanMode::Mean, Objective::Task(TaskSpec::new(TaskKind::PointmassGoto)));
    let opt_spec = PlanSpec { mode: PlanMode::Optimistic, halluc_beta: 3.0, ..mean_spec.clone() };
    let x0 = env.observe(&env.initial_state());
    let a = propagate(
        &mean_spec,
        Some(&model),
        &env,
        &x0,
        &CandidatePlan { actions, value: 0.0 },
        &mut rng::stream(7, &[]),
    )
    .unwrap();
    let b = propagate(
        &opt_spec,
        Some(&model),
        &env,
        &x0,
        &CandidatePlan { actions: opt, value: 0.0 },
        &mut rng::stream(7, &[]),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn perfect_model_matches_simulator() {
    for env in [noiseless_pendulum(), EnvSpec::point_mass().with_noise(0.0), EnvSpec::mountain_car()] {
        let model = TrueModel::new(env.clone());
        let du = env.action_dim();
        let mut r = rng::stream(8, &[]);
        let actions = DMatrix::from_fn(25, du, |_, j| r.random_range(env.action_low[j]..env.action_high[j]));
        let plan = CandidatePlan { actions, value: 0.0 };
        let obj = Objective::Custom(StepRewardFn::new(|_, _| 0.0));
        let x0 = env.observe(&env.initial_state());
        let m = propagate(
            &PlanSpec::new(PlanMode::Mean, obj.clone()),
            Some(&model),
            &env,
            &x0,
            &plan,
            &mut rng::stream(9, &[]),
        )
        .unwrap();
        let t = propagate(&PlanSpec::new(PlanMode::TrueEnv, obj), None, &env, &x0, &plan, &mut rng::stream(9, &[]))
            .unwrap();
        for (a, b) in m.iter().zip(&t) {
            for (p, q) in a.iter().zip(b) {
                assert!((p - q).abs() < 1e-10, "{:?}: {p} vs {q}", env.kind);
            }
        }
    }
}

#[test]
fn plans_respect_bounds() {
    let env = EnvSpec::pendulum();
    let gp = pendulum_gp(&env, 20, 10);
    let spec = PlanSpec::new(PlanMode::Optimistic, Objective::Intrinsic(IntrinsicSpec::log_ratio(0.05)))
        .with_beta(2.0)
        .with_icem(ICemParams { init_std: 3.0, ..small_icem(5) });
    let plan =
        icem_plan(&spec, Some(&gp), &env, &env.observe(&env.initial_state()), &mut rng::stream(11, &[])).unwrap();
    assert_eq!(plan.actions.ncols(), 4);
    for t in 0..5 {
        assert!((-2.0..=2.0).contains(&plan.actions[(t, 0)]));
        for j in 1..4 {
            assert!((-1.0..=1.0).contains(&plan.actions[(t, j)]));
        }
    }
}

#[test]
fn mpc_is_reproducible() {
    let env = noiseless_pendulum();
    let gp = pendulum_gp(&env, 20, 12);
    let spec = PlanSpec::new(PlanMode::Mean, Objective::Task(TaskSpec::new(TaskKind::PendulumSwingup)))
        .with_icem(small_icem(6));
    let run = || {
        let mut ctrl = MpcController::new(spec.clone(), Some(&gp), &env).unwrap();
        let mut r = rng::stream(13, &[]);
        let x = env.observe(&env.initial_state());
        (0..3).map(|_| mpc_step(&mut ctrl, &x, &mut r).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn random_mode_needs_no_model() {
    let env = EnvSpec::point_mass();
    let spec = PlanSpec::new(PlanMode::Random, Objective::Intrinsic(IntrinsicSpec::log_ratio(0.01)));
    let mut ctrl = MpcController::new(spec, None, &env).unwrap();
    let mut r = rng::stream(14, &[]);
    for _ in 0..200 {
        let u = ctrl.step(&[0.0; 4], &mut r).unwrap();
        assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn invalid_setups_rejected() {
    let env = EnvSpec::pendulum();
    let gp = pendulum_gp(&env, 10, 15);
    let intrinsic = Objective::Intrinsic(IntrinsicSpec::log_ratio(0.01));
    assert!(MpcController::new(PlanSpec::new(PlanMode::Mean, intrinsic.clone()), None, &env).is_err());
    assert!(MpcController::new(PlanSpec::new(PlanMode::Ts1, intrinsic.clone()), Some(&gp), &env).is_err());
    let neg = PlanSpec::new(PlanMode::Optimistic, intrinsic.clone()).with_beta(-1.0);
    assert!(MpcController::new(neg, Some(&gp), &env).is_err());
    let bad_k = ICemParams { elite_size: 600, ..ICemParams::default() };
    assert!(PlanSpec::new(PlanMode::Mean, intrinsic.clone()).with_icem(bad_k).validate().is_err());
    let pm = EnvSpec::point_mass();
    assert!(MpcController::new(PlanSpec::new(PlanMode::Mean, intrinsic), Some(&gp), &pm).is_err());
}

#[test]
fn ts1_runs_on_ensemble() {
    use crate::ensemble::{ensemble_fit, EnsembleConfig};
    let env = EnvSpec::pendulum();
    let mut r = rng::stream(16, &[]);
    let data =
        rollout(&env, |_| Ok(vec![r.random_range(-2.0..2.0)]), &env.initial_state(), 40, &mut rng::stream(17, &[]))
            .unwrap()
            .data
            .to_deltas();
    let cfg = EnsembleConfig { members: 3, hidden_units: 16, epochs: 5, ..EnsembleConfig::default() };
    let ens = ensemble_fit(&data, &cfg, 18).unwrap();
    let spec =
        PlanSpec::new(PlanMode::Ts1, Objective::Intrinsic(IntrinsicSpec::log_ratio(0.01))).with_icem(small_icem(5));
    let plan =
        icem_plan(&spec, Some(&ens), &env, &env.observe(&env.initial_state()), &mut rng::stream(19, &[])).unwrap();
    assert!(plan.value.is_finite() && plan.value > 0.0);
}

/// Optimal 200-step swing-up return from the hanging state, from value
/// iteration on a 401 x 321 grid followed by a greedy rollout on the exact
/// dynamics.
const SWINGUP_OPTIMUM: f64 = -297.1;

#[test]
fn oracle_swingup_near_optimal() {
    let env = noiseless_pendulum();
    let icem = ICemParams {
        num_samples: 200,
        horizon: 30,
        elite_size: 20,
        num_particles: 1,
        cem_iterations: 5,
        ..ICemParams::default()
    };
    let spec =
        PlanSpec::new(PlanMode::TrueEnv, Objective::Task(TaskSpec::new(TaskKind::PendulumSwingup))).with_icem(icem);
    let task = TaskSpec::new(TaskKind::PendulumSwingup);
    let mut ctrl = MpcController::new(spec, None, &env).unwrap();
    let mut r = rng::stream(20, &[]);
    let mut x = env.initial_state();
    let mut ret = 0.0;
    for _ in 0..200 {
        let u = ctrl.step(&env.observe(&x), &mut r).unwrap();
        ret += task.reward(&x, &u);
        x = env.f_star(&x, &u);
    }
    assert!(ret <= SWINGUP_OPTIMUM + 1.0, "return {ret} beats the optimum");
    assert!(ret >= 1.25 * SWINGUP_OPTIMUM, "return {ret}");
    assert!(x[0].abs() < 0.1, "pendulum not upright: {x:?}");
}
