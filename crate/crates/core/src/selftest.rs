//! Property suite run by `opax selftest` and the acceptance harness.
//!
//! Every check compares the production code against an independent
//! reference (explicit inverses, direct DFTs, finite differences) or an
//! inequality that must hold exactly, and reports a pass/fail line.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::{gradient_check, Activation, Ensemble, Loss, Mlp};
use crate::envs::{rollout, EnvSpec};
use crate::planner::{
    colored_noise_batch, evaluate_plans, icem_plan, ICemParams, MpcController, Objective, PlanMode, PlanSpec,
    StepRewardFn,
};
use crate::rewards::IntrinsicSpec;
use crate::statmodel::{calibration_coverage, gp_fit, gp_predict, Dataset, GpModel, KernelSpec, StatModel};
use crate::{oracle, rng, Result};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check::new(name, passed, detail),
            Err(e) => Check::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn random_dataset(r: &mut rng::Rng, n: usize, din: usize, dout: usize, scale: f64) -> Dataset {
    let mut d = Dataset::new(din, dout);
    for _ in 0..n {
        let z: Vec<f64> = (0..din).map(|_| r.random_range(-scale..scale)).collect();
        let y: Vec<f64> =
            (0..dout).map(|o| (z.iter().sum::<f64>() + o as f64).sin() + 0.1 * r.random::<f64>()).collect();
        d.push(z, y).unwrap();
    }
    d
}

fn random_kernel(r: &mut rng::Rng, din: usize) -> KernelSpec {
    let ls = (0..din).map(|_| r.random_range(0.5..2.0)).collect();
    let sv = r.random_range(0.5..2.0);
    if r.random::<bool>() {
        KernelSpec::rbf(1.0, sv).with_lengthscales(ls)
    } else {
        KernelSpec::matern52(1.0, sv).with_lengthscales(ls)
    }
}

/// GP posterior against an explicit-inverse reference on 100 random
/// problems with `n <= 200` and up to 3 input and output dimensions.
pub fn gp_oracle() -> Check {
    let run = || -> Result<(bool, String)> {
        let start = Instant::now();
        let mut r = rng::stream(0x6770, &[]);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = r.random_range(1..=200);
            let (din, dout) = (r.random_range(1..=3), r.random_range(1..=3));
            let d = random_dataset(&mut r, n, din, dout, 3.0);
            let k = random_kernel(&mut r, din);
            let sigma = r.random_range(0.05..0.5);
            let m = gp_fit(&d, k.clone(), sigma, 2.0)?;
            for _ in 0..3 {
                let z: Vec<f64> = (0..din).map(|_| r.random_range(-4.0..4.0)).collect();
                let p = gp_predict(&m, &z)?;
                let (mu, var) = oracle::gp_posterior_direct(&k, sigma, &d.inputs, &d.targets, &z);
                let std = var.max(0.0).sqrt();
                for j in 0..dout {
                    worst = worst.max((p.mean[j] - mu[j]).abs() / mu[j].abs().max(1.0));
                    worst = worst.max((p.epistemic[j] - std).abs() / std.max(1.0));
                }
            }
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((worst <= 1e-6 && secs < 10.0, format!("max relative error {worst:.2e} (<= 1e-6), {secs:.2} s (< 10 s)")))
    };
    Check::from_result("gp oracle equivalence", run())
}

/// Epistemic std at 100 probes never grows when the training set grows.
pub fn variance_monotonicity() -> Check {
    let run = || -> Result<(bool, String)> {
        let mut r = rng::stream(0x6d6f, &[]);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..50 {
            let din = r.random_range(1..=3);
            let d = random_dataset(&mut r, 60, din, 1, 2.0);
            let k = random_kernel(&mut r, din);
            let probes = DMatrix::from_fn(100, din, |_, _| r.random_range(-3.0..3.0));
            let mut prev: Option<DMatrix<f64>> = None;
            for n in [0, 5, 15, 30, 60] {
                let m = gp_fit(&d.prefix(n), k.clone(), 0.1, 2.0)?;
                let s = m.predict_batch(&probes, true)?.epistemic;
                if let Some(p) = &prev {
                    worst = worst.max((&s - p).max());
                }
                prev = Some(s);
            }
        }
        Ok((worst <= 1e-8, format!("largest increase {worst:.2e} (<= 1e-8)")))
    };
    Check::from_result("variance monotonicity", run())
}

/// The information a trajectory carries under the current GP never exceeds
/// `1/2 sum_t sum_j log(1 + sigma_j^2(z_t) / s^2)` with `sigma` from the
/// same model, on 100 random pendulum trajectories.
pub fn info_gain_bound() -> Check {
    let run = || -> Result<(bool, String)> {
        let env = EnvSpec::pendulum();
        let mut violations = 0;
        let mut tightest = f64::INFINITY;
        for trial in 0..100u64 {
            let mut r = rng::stream(0x6967, &[trial]);
            let random = |r: &mut rng::Rng, steps: usize| {
                let mut pr = rng::stream(r.random(), &[]);
                rollout(&env, |_| Ok(vec![pr.random_range(-2.0..2.0)]), &env.initial_state(), steps, r)
            };
            let n = r.random_range(1..=40);
            let prior = random(&mut r, n)?.data.to_deltas();
            let noise = r.random_range(0.01..0.3);
            let m = GpModel::fit(
                &prior,
                KernelSpec::rbf(1.0, 1.0).with_lengthscales(vec![1.0, 1.0, 4.0, 2.0]),
                noise,
                2.0,
            )?;
            let traj = random(&mut r, 30)?.data.to_deltas();
            let points = traj.inputs_matrix();
            let gain = m.conditional_information_gain(&points)? * env.obs_dim() as f64;
            let sig = m.predict_batch(&points, true)?.epistemic;
            let bound = 0.5 * sig.iter().map(|s| (s * s / (noise * noise)).ln_1p()).sum::<f64>();
            if gain > bound {
                violations += 1;
            }
            tightest = tightest.min(bound - gain);
        }
        Ok((violations == 0, format!("{violations} violations (need 0), smallest slack {tightest:.3e}")))
    };
    Check::from_result("information gain bound", run())
}

/// A beta = 2 GP on functions drawn from its own prior covers at least 90%
/// of 500 test points, averaged over 20 draws.
pub fn calibration() -> Check {
    let run = || -> Result<(bool, String)> {
        let k = KernelSpec::rbf(0.8, 1.0);
        let sigma = 0.1;
        let (n_train, n_test) = (40, 500);
        let mut total = 0.0;
        for draw in 0..20u64 {
            let mut r = rng::stream(0x6361, &[draw]);
            let z = DMatrix::from_fn(n_train + n_test, 2, |_, _| r.random_range(-2.0..2.0));
            let mut gram = k.gram(&z)?;
            for i in 0..gram.nrows() {
                gram[(i, i)] += 1e-8;
            }
            let l = gram.cholesky().expect("prior Gram matrix is positive definite").unpack();
            let w = DMatrix::from_fn(z.nrows(), 1, |_, _| StandardNormal.sample(&mut r));
            let f = l * w;
            let mut d = Dataset::new(2, 1);
            for i in 0..n_train {
                let e: f64 = StandardNormal.sample(&mut r);
                d.push(z.row(i).iter().copied().collect(), vec![f[i] + sigma * e])?;
            }
            let m = gp_fit(&d, k.clone(), sigma, 2.0)?;
            let truth: Vec<(Vec<f64>, Vec<f64>)> =
                (n_train..z.nrows()).map(|i| (z.row(i).iter().copied().collect(), vec![f[i]])).collect();
            total += calibration_coverage(&m, &truth)?;
        }
        let mean = total / 20.0;
        Ok((mean >= 0.9, format!("mean coverage {mean:.4} (>= 0.9)")))
    };
    Check::from_result("calibration coverage", run())
}

/// One-step quadratic `-(u - 0.3)^2`: iCEM lands within 0.02 of the
/// optimum in at least 95 of 100 seeded trials.
pub fn planner_quadratic() -> Check {
    let run = || -> Result<(bool, String)> {
        let env = EnvSpec::pendulum().with_noise(0.0);
        let icem = ICemParams { horizon: 1, num_particles: 1, cem_iterations: 3, ..ICemParams::default() };
        let obj = Objective::Custom(StepRewardFn::new(|_, u| -(u[0] - 0.3).powi(2)));
        let spec = PlanSpec::new(PlanMode::TrueEnv, obj).with_icem(icem);
        let x0 = env.observe(&env.initial_state());
        let mut hits = 0;
        for seed in 0..100 {
            let plan = icem_plan(&spec, None, &env, &x0, &mut rng::stream(seed, &[]))?;
            if (plan.actions[(0, 0)] - 0.3).abs() < 0.02 {
                hits += 1;
            }
        }
        Ok((hits >= 95, format!("{hits}/100 within 0.02 (need 95)")))
    };
    Check::from_result("planner quadratic optimum", run())
}

/// Log-log PSD slope of colored noise is `-beta` within 0.5 for beta in
/// {0, 1, 2}.
pub fn colored_noise_slopes() -> Check {
    let mut r = rng::stream(0x636e, &[]);
    let n = 256;
    let mut slopes = Vec::new();
    for beta in [0.0, 1.0, 2.0] {
        let draws = colored_noise_batch(beta, n, 1, 200, &mut r);
        let mut psd = vec![0.0; n / 2 + 1];
        for d in &draws {
            let x: Vec<f64> = d.column(0).iter().copied().collect();
            for (acc, p) in psd.iter_mut().zip(oracle::periodogram(&x)) {
                *acc += p;
            }
        }
        slopes.push((beta, oracle::log_log_slope(&psd, n)));
    }
    let passed = slopes.iter().all(|(b, s)| (s + b).abs() <= 0.5);
    let detail = slopes.iter().map(|(b, s)| format!("beta {b}: {s:.3}")).collect::<Vec<_>>().join(", ")
        + " (within 0.5 of -beta)";
    Check::new("colored noise spectrum", passed, detail)
}

/// With the actions fixed, the optimistic objective over hallucinated
/// controls is at least the mean-propagation objective, in at least 95 of
/// 100 GP trials. Both are evaluated on the same transition noise.
pub fn optimism() -> Check {
    let run = || -> Result<(bool, String)> {
        let env = EnvSpec::pendulum();
        let kernel = KernelSpec::rbf(1.0, 1.0).with_lengthscales(vec![1.0, 1.0, 4.0, 2.0]);
        let icem = ICemParams {
            num_samples: 100,
            horizon: 10,
            elite_size: 10,
            num_particles: 3,
            cem_iterations: 3,
            ..ICemParams::default()
        };
        let obj = Objective::Intrinsic(IntrinsicSpec::log_ratio(0.05));
        let opt = PlanSpec::new(PlanMode::Optimistic, obj.clone()).with_icem(icem.clone()).with_beta(2.0);
        let mean = PlanSpec::new(PlanMode::Mean, obj).with_icem(icem.clone());
        let mut passes = 0;
        let mut worst = f64::INFINITY;
        for trial in 0..100u64 {
            let mut r = rng::stream(0x6f70, &[trial]);
            let mut d = Dataset::new(4, 3);
            for z in env.reachable_sample(&mut r, 20) {
                let next = env.f_star_obs(&z);
                let delta = next.iter().zip(&z).map(|(a, b)| a - b).collect();
                d.push(z, delta)?;
            }
            let m = gp_fit(&d, kernel.clone(), 0.05, 2.0)?;
            let x0 = env.reachable_sample(&mut r, 1).remove(0)[..3].to_vec();
            let actions = DMatrix::from_fn(icem.horizon, 1, |_, _| r.random_range(-2.0..2.0));
            let mut ctrl = MpcController::new(opt.clone(), Some(&m), &env)?.with_fixed_actions(&actions)?;
            let best = ctrl.plan(&x0, &mut r)?;
            let seed = r.random();
            let v_opt = evaluate_plans(&opt, Some(&m), &env, &x0, &[best.actions], seed)?[0];
            let v_mean = evaluate_plans(&mean, Some(&m), &env, &x0, &[actions], seed)?[0];
            if v_opt >= v_mean {
                passes += 1;
            }
            worst = worst.min(v_opt - v_mean);
        }
        Ok((passes >= 95, format!("{passes}/100 trials optimistic >= mean (need 95), smallest margin {worst:.3e}")))
    };
    Check::from_result("optimism", run())
}

/// Backprop against central differences (`h = 1e-5`, 20 parameters per
/// layer, 1e-4 relative) for every activation and both losses.
pub fn gradients() -> Check {
    let mut r = rng::stream(0x6763, &[]);
    let x = DMatrix::from_fn(8, 4, |_, _| r.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(8, 3, |_, _| r.random_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for act in [Activation::Relu, Activation::Silu, Activation::Tanh] {
        for loss in [Loss::Squared, Loss::GaussianNll] {
            let mut net = Mlp::init(4, &[16, 16], 3, act, &mut r);
            for l in &mut net.layers {
                l.bias.apply(|b| *b = r.random_range(-0.3..0.3));
            }
            let c = gradient_check(&net, &x, &y, loss, 20, 1e-5, &mut r);
            worst = worst.max(c.max_rel_error);
            checked += c.checked;
        }
    }
    Check::new(
        "ensemble gradients",
        worst <= 1e-4,
        format!("{checked} parameters, max relative error {worst:.2e} (<= 1e-4)"),
    )
}

/// Copies of one network have exactly zero disagreement everywhere.
pub fn duplicated_members() -> Check {
    let mut r = rng::stream(0x6475, &[]);
    let net = Mlp::init(4, &[16, 16], 3, Activation::Silu, &mut r);
    let e = Ensemble::from_members(vec![net; 5], 1.0).expect("shared architecture");
    let zs = DMatrix::from_fn(200, 4, |_, _| r.random_range(-3.0..3.0));
    let max = match e.predict_batch(&zs, true) {
        Ok(p) => p.epistemic.max(),
        Err(err) => return Check::new("duplicated members", false, format!("error: {err}")),
    };
    Check::new("duplicated members", max == 0.0, format!("max epistemic {max:e} (need 0)"))
}

/// All checks in a fixed order.
pub fn run_all() -> Vec<Check> {
    vec![
        gp_oracle(),
        variance_monotonicity(),
        info_gain_bound(),
        calibration(),
        planner_quadratic(),
        colored_noise_slopes(),
        optimism(),
        gradients(),
        duplicated_members(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Layer;

    #[test]
    fn display_tags_outcome() {
        let c = Check::new("x", false, "y".into());
        assert_eq!(c.to_string(), "FAIL x: y");
    }

    #[test]
    fn constant_ensemble_has_no_disagreement() {
        let mut layer = Layer::zeros(1, 2);
        layer.bias[0] = 0.4;
        let net = Mlp { layers: vec![layer], activation: Activation::Tanh, out_dim: 1 };
        let e = Ensemble::from_members(vec![net; 3], 1.0).unwrap();
        assert_eq!(e.predict(&[2.0]).unwrap().epistemic, vec![0.0]);
        assert!(duplicated_members().passed);
    }
}
