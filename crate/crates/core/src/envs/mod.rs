//! Analytic simulators of the form `x' = f(x, u) + w`.
//!
//! Each environment integrates its own simulator state and exposes an
//! observation to the learned models. For the pendulum the simulator state
//! is `(theta, theta_dot)` and the observation is
//! `(cos theta, sin theta, theta_dot)`; for the other environments the two
//! coincide.

mod tasks;
mod true_model;

pub use tasks::{task_reward, TaskKind, TaskSpec};
pub use true_model::TrueModel;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::statmodel::Dataset;
use crate::{Error, Result};

pub const GRAVITY: f64 = 9.81;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const CAR_MIN_POS: f64 = -1.2;
pub const CAR_MAX_POS: f64 = 0.6;
pub const CAR_MAX_SPEED: f64 = 0.07;
pub const POINT_MAX_POS: f64 = 2.0;
pub const POINT_MAX_SPEED: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    MountainCar,
    PointMass,
}

/// Start-state distribution of exploration episodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reset {
    /// Always the nominal initial state (pendulum hanging down at rest).
    Fixed,
    /// The benchmark's randomized reset: pendulum `theta ~ U(-pi, pi]`,
    /// `theta_dot ~ U(-1, 1)`; mountain car position `~ U(-0.6, -0.4)` at
    /// rest; point mass position `~ U(-0.5, 0.5)^2` at rest.
    Random,
}

/// Simulator configuration. When deserialized, every field except `kind`
/// falls back to the defaults of that kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "EnvSpecRepr")]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub dt: f64,
    /// Standard deviation of the additive process noise.
    pub noise_sigma: f64,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Episode length.
    pub horizon: usize,
    pub reset: Reset,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvSpecRepr {
    kind: EnvKind,
    dt: Option<f64>,
    noise_sigma: Option<f64>,
    action_low: Option<Vec<f64>>,
    action_high: Option<Vec<f64>>,
    horizon: Option<usize>,
    reset: Option<Reset>,
}

impl From<EnvSpecRepr> for EnvSpec {
    fn from(r: EnvSpecRepr) -> Self {
        let d = EnvSpec::default_for(r.kind);
        EnvSpec {
            kind: r.kind,
            dt: r.dt.unwrap_or(d.dt),
            noise_sigma: r.noise_sigma.unwrap_or(d.noise_sigma),
            action_low: r.action_low.unwrap_or(d.action_low),
            action_high: r.action_high.unwrap_or(d.action_high),
            horizon: r.horizon.unwrap_or(d.horizon),
            reset: r.reset.unwrap_or(d.reset),
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = theta - two_pi * ((theta - PI) / two_pi).ceil();
    if w <= -PI {
        w + two_pi
    } else {
        w
    }
}

impl EnvSpec {
    pub fn pendulum() -> Self {
        EnvSpec {
            kind: EnvKind::Pendulum,
            dt: 0.05,
            noise_sigma: 0.01,
            action_low: vec![-2.0],
            action_high: vec![2.0],
            horizon: 100,
            reset: Reset::Random,
        }
    }

    pub fn mountain_car() -> Self {
        EnvSpec {
            kind: EnvKind::MountainCar,
            dt: 1.0,
            noise_sigma: 0.0,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            horizon: 200,
            reset: Reset::Random,
        }
    }

    pub fn point_mass() -> Self {
        EnvSpec {
            kind: EnvKind::PointMass,
            dt: 0.1,
            noise_sigma: 0.01,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            horizon: 100,
            reset: Reset::Random,
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Pendulum => Self::pendulum(),
            EnvKind::MountainCar => Self::mountain_car(),
            EnvKind::PointMass => Self::point_mass(),
        }
    }

    pub fn with_reset(mut self, reset: Reset) -> Self {
        self.reset = reset;
        self
    }

    /// Start state of an exploration episode.
    pub fn reset_state(&self, rng: &mut impl Rng) -> Vec<f64> {
        if self.reset == Reset::Fixed {
            return self.initial_state();
        }
        match self.kind {
            EnvKind::Pendulum => vec![wrap_angle(rng.random_range(-PI..PI)), rng.random_range(-1.0..1.0)],
            EnvKind::MountainCar => vec![rng.random_range(-0.6..-0.4), 0.0],
            EnvKind::PointMass => vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0, 0.0],
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("env dt must be positive, got {}", self.dt)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("env noise sigma must be >= 0"));
        }
        if self.horizon < 1 {
            return Err(Error::config("env horizon must be >= 1"));
        }
        if self.action_low.len() != self.action_dim() || self.action_high.len() != self.action_dim() {
            return Err(Error::config(format!("{:?} needs {} action bounds", self.kind, self.action_dim())));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::config(format!("invalid action bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Dimension of the simulator state.
    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum | EnvKind::MountainCar => 2,
            EnvKind::PointMass => 4,
        }
    }

    /// Dimension of the observation the models learn on.
    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum => 3,
            EnvKind::MountainCar => 2,
            EnvKind::PointMass => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum | EnvKind::MountainCar => 1,
            EnvKind::PointMass => 2,
        }
    }

    /// Nominal start state; downstream tasks always begin here.
    pub fn initial_state(&self) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![PI, 0.0],
            EnvKind::MountainCar => vec![-0.5, 0.0],
            EnvKind::PointMass => vec![0.0; 4],
        }
    }

    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![x[0].cos(), x[0].sin(), x[1]],
            _ => x.to_vec(),
        }
    }

    pub fn state_from_obs(&self, obs: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![wrap_angle(obs[1].atan2(obs[0])), obs[2]],
            _ => obs.to_vec(),
        }
    }

    pub fn clip_action(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.action_low.iter().zip(&self.action_high)).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
    }

    /// Box of simulator states considered reachable, as `(low, high)`.
    pub fn state_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            EnvKind::Pendulum => (vec![-PI, -PENDULUM_MAX_SPEED], vec![PI, PENDULUM_MAX_SPEED]),
            EnvKind::MountainCar => (vec![CAR_MIN_POS, -CAR_MAX_SPEED], vec![CAR_MAX_POS, CAR_MAX_SPEED]),
            EnvKind::PointMass => (
                vec![-POINT_MAX_POS, -POINT_MAX_POS, -POINT_MAX_SPEED, -POINT_MAX_SPEED],
                vec![POINT_MAX_POS, POINT_MAX_POS, POINT_MAX_SPEED, POINT_MAX_SPEED],
            ),
        }
    }

    /// Noise-free dynamics `f(x, u)`; `u` is clipped to the action bounds.
    pub fn f_star(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let u = self.clip_action(u);
        match self.kind {
            EnvKind::Pendulum => {
                let (g, m, l) = (GRAVITY, 1.0, 1.0);
                let acc = 3.0 * g / (2.0 * l) * x[0].sin() + 3.0 / (m * l * l) * u[0];
                let speed = (x[1] + acc * self.dt).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                vec![wrap_angle(x[0] + speed * self.dt), speed]
            }
            EnvKind::MountainCar => {
                let v = (x[1] + 0.0015 * u[0] - 0.0025 * (3.0 * x[0]).cos()).clamp(-CAR_MAX_SPEED, CAR_MAX_SPEED);
                let p = (x[0] + v).clamp(CAR_MIN_POS, CAR_MAX_POS);
                vec![p, v]
            }
            EnvKind::PointMass => {
                let dt = self.dt;
                let mut next = Vec::with_capacity(4);
                for i in 0..2 {
                    next.push(x[i] + x[i + 2] * dt + 0.5 * u[i] * dt * dt);
                }
                for i in 0..2 {
                    next.push(x[i + 2] + u[i] * dt);
                }
                self.clip_state(next)
            }
        }
    }

    fn clip_state(&self, mut x: Vec<f64>) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => {
                x[0] = wrap_angle(x[0]);
                x
            }
            _ => {
                let (lo, hi) = self.state_box();
                x.iter_mut().zip(lo.iter().zip(&hi)).for_each(|(v, (l, h))| *v = v.clamp(*l, *h));
                x
            }
        }
    }

    /// Adds `noise_sigma * noise` to a post-integration state and restores
    /// the state invariants (angle wrapping, box clipping).
    pub fn apply_noise(&self, x: Vec<f64>, noise: &[f64]) -> Vec<f64> {
        if self.noise_sigma == 0.0 {
            return x;
        }
        let noisy = x.iter().zip(noise).map(|(v, w)| v + self.noise_sigma * w).collect();
        self.clip_state(noisy)
    }

    /// One transition with noise drawn from `rng`.
    pub fn step(&self, x: &[f64], u: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let noise: Vec<f64> = (0..self.state_dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.step_with_noise(x, u, &noise)
    }

    /// One transition with caller-supplied standard-normal noise.
    pub fn step_with_noise(&self, x: &[f64], u: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() || u.len() != self.action_dim() {
            return Err(Error::input(format!(
                "{:?} expects state/action of dimension {}/{}, got {}/{}",
                self.kind,
                self.state_dim(),
                self.action_dim(),
                x.len(),
                u.len()
            )));
        }
        let next = self.apply_noise(self.f_star(x, u), noise);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation(format!("{:?} from {x:?} with action {u:?}", self.kind)));
        }
        Ok(next)
    }

    /// Uniform samples `z = (observe(x), u)` from the reachable state box
    /// times the action box.
    pub fn reachable_sample(&self, rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.state_box();
        (0..n)
            .map(|_| {
                let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect();
                let x = match self.kind {
                    // keep the angle in (-pi, pi]
                    EnvKind::Pendulum => vec![wrap_angle(x[0]), x[1]],
                    _ => x,
                };
                let mut z = self.observe(&x);
                z.extend(self.action_low.iter().zip(&self.action_high).map(|(l, h)| l + (h - l) * rng.random::<f64>()));
                z
            })
            .collect()
    }

    /// `f` evaluated in observation space: the next observation for the
    /// model input `z = (obs, u)`.
    pub fn f_star_obs(&self, z: &[f64]) -> Vec<f64> {
        let dx = self.obs_dim();
        let x = self.state_from_obs(&z[..dx]);
        self.observe(&self.f_star(&x, &z[dx..]))
    }
}

pub fn env_step(env: &EnvSpec, x: &[f64], u: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    env.step(x, u, rng)
}

pub fn reachable_sample(env: &EnvSpec, rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    env.reachable_sample(rng, n)
}

/// Result of executing a policy on the true system.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// Simulator states `x_0 ..= x_T`.
    pub states: Vec<Vec<f64>>,
    /// Executed (clipped) actions `u_0 .. u_{T-1}`.
    pub actions: Vec<Vec<f64>>,
    /// Transitions `((obs_t, u_t), obs_{t+1})`.
    pub data: Dataset,
}

/// Runs `policy` for `horizon` steps from `x0`. The policy sees the current
/// observation.
pub fn rollout<P>(env: &EnvSpec, mut policy: P, x0: &[f64], horizon: usize, rng: &mut impl Rng) -> Result<Rollout>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if horizon < 1 {
        return Err(Error::input("rollout horizon must be >= 1"));
    }
    let dx = env.obs_dim();
    let mut data = Dataset::new(dx + env.action_dim(), dx);
    let mut states = vec![x0.to_vec()];
    let mut actions = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = states.last().unwrap().clone();
        let obs = env.observe(&x);
        let u = env.clip_action(&policy(&obs)?);
        let next = env.step(&x, &u, rng)?;
        let mut z = obs;
        z.extend_from_slice(&u);
        data.push(z, env.observe(&next))?;
        actions.push(u);
        states.push(next);
    }
    Ok(Rollout { states, actions, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{oracle, rng};

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5 - 4.0 * PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pendulum_equilibria() {
        let env = EnvSpec::pendulum().with_noise(0.0);
        let mut r = rng::stream(0, &[]);
        let down = env.step(&[PI, 0.0], &[0.0], &mut r).unwrap();
        assert!((down[0] - PI).abs() < 1e-12 || (down[0] + PI).abs() < 1e-12);
        assert!(down[1].abs() < 1e-12);
        assert_eq!(env.step(&[0.0, 0.0], &[0.0], &mut r).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn pendulum_step_matches_rk4_velocity() {
        let env = EnvSpec::pendulum().with_noise(0.0);
        let next = env.f_star(&[PI / 2.0, 0.0], &[0.0]);
        let ode = |y: &[f64]| vec![y[1], 1.5 * GRAVITY * y[0].sin()];
        let reference = oracle::rk4(ode, &[PI / 2.0, 0.0], env.dt, 10);
        assert!((next[1] - reference[1]).abs() < 5e-3);
        // semi-implicit Euler position error is bounded by the local truncation term
        let acc = 1.5 * GRAVITY;
        assert!((next[0] - reference[0]).abs() < 0.5 * acc * env.dt * env.dt + 5e-3);
    }

    #[test]
    fn actions_are_clipped() {
        let env = EnvSpec::pendulum().with_noise(0.0);
        assert_eq!(env.f_star(&[0.3, 0.1], &[10.0]), env.f_star(&[0.3, 0.1], &[2.0]));
    }

    #[test]
    fn mountain_car_formula() {
        let env = EnvSpec::mountain_car();
        let x = [-0.5, 0.01];
        let next = env.f_star(&x, &[0.5]);
        let v = 0.01 + 0.0015 * 0.5 - 0.0025 * (3.0f64 * -0.5).cos();
        assert!((next[1] - v).abs() < 1e-15);
        assert!((next[0] - (-0.5 + v)).abs() < 1e-15);
        let wall = env.f_star(&[-1.2, -0.07], &[-1.0]);
        assert_eq!(wall[0], CAR_MIN_POS);
    }

    #[test]
    fn point_mass_double_integrator() {
        let env = EnvSpec::point_mass().with_noise(0.0);
        let next = env.f_star(&[0.0, 0.0, 0.5, 0.0], &[1.0, -1.0]);
        assert!((next[0] - (0.05 + 0.005)).abs() < 1e-12);
        assert!((next[1] + 0.005).abs() < 1e-12);
        assert!((next[2] - 0.6).abs() < 1e-12);
        assert!((next[3] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn observation_round_trip() {
        let env = EnvSpec::pendulum();
        let x = vec![-2.5, 3.0];
        let back = env.state_from_obs(&env.observe(&x));
        assert!((back[0] - x[0]).abs() < 1e-12 && back[1] == x[1]);
    }

    #[test]
    fn reachable_samples_in_box() {
        for env in [EnvSpec::pendulum(), EnvSpec::mountain_car(), EnvSpec::point_mass()] {
            let a = env.reachable_sample(&mut rng::stream(5, &[]), 1);
            let b = env.reachable_sample(&mut rng::stream(5, &[]), 1);
            assert_eq!(a, b);
            let (lo, hi) = env.state_box();
            for z in env.reachable_sample(&mut rng::stream(6, &[]), 10_000) {
                let dx = env.obs_dim();
                let x = env.state_from_obs(&z[..dx]);
                for i in 0..x.len() {
                    assert!(x[i] >= lo[i] - 1e-12 && x[i] <= hi[i] + 1e-12);
                }
                for (j, u) in z[dx..].iter().enumerate() {
                    assert!(*u >= env.action_low[j] && *u <= env.action_high[j]);
                }
            }
        }
    }

    #[test]
    fn reachable_sample_means_near_box_centre() {
        let env = EnvSpec::point_mass();
        let n = 10_000;
        let zs = env.reachable_sample(&mut rng::stream(8, &[]), n);
        let (lo, hi) = env.state_box();
        let mut lows = lo.clone();
        lows.extend(&env.action_low);
        let mut highs = hi.clone();
        highs.extend(&env.action_high);
        for d in 0..lows.len() {
            let mean = zs.iter().map(|z| z[d]).sum::<f64>() / n as f64;
            let centre = 0.5 * (lows[d] + highs[d]);
            let se = (highs[d] - lows[d]) / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - centre).abs() < 3.0 * se, "dim {d}: {mean} vs {centre}");
        }
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let env = EnvSpec::pendulum().with_noise(0.0);
        let r = rollout(&env, |_| Ok(vec![0.0]), &[PI, 0.0], 1, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(r.data.len(), 1);
        assert_eq!(r.states.len(), 2);
        assert!((r.data.targets[0][0] + 1.0).abs() < 1e-12);

        let plan = [0.5, -2.0, 1.0, 0.3, 2.0];
        let run = |seed| {
            let mut t = 0;
            rollout(
                &env,
                |_| {
                    t += 1;
                    Ok(vec![plan[t - 1]])
                },
                &[0.4, 0.0],
                5,
                &mut rng::stream(seed, &[]),
            )
            .unwrap()
        };
        assert_eq!(run(1).states, run(2).states);
        assert_eq!(run(1).data.len(), 5);
    }

    #[test]
    fn process_noise_has_configured_std() {
        let env = EnvSpec::pendulum().with_noise(0.01);
        let mut r = rng::stream(9, &[]);
        let x0 = [1.0, 0.5];
        let clean = env.f_star(&x0, &[0.2]);
        let draws: Vec<f64> = (0..1000)
            .map(|_| {
                let ro = rollout(&env, |_| Ok(vec![0.2]), &x0, 1, &mut r).unwrap();
                ro.states[1][1] - clean[1]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / 1000.0;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
        assert!((std - 0.01).abs() < 0.001, "std {std}");
    }

    #[test]
    fn finite_difference_jacobians_are_bounded() {
        let h = 1e-6;
        for env in [EnvSpec::pendulum(), EnvSpec::mountain_car(), EnvSpec::point_mass()] {
            let mut r = rng::stream(10, &[]);
            let mut worst: f64 = 0.0;
            for z in env.reachable_sample(&mut r, 200) {
                let dx = env.obs_dim();
                let x = env.state_from_obs(&z[..dx]);
                let u = &z[dx..];
                for i in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let (fp, fm) = (env.observe(&env.f_star(&xp, u)), env.observe(&env.f_star(&xm, u)));
                    let g: f64 = fp.iter().zip(&fm).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>().sqrt();
                    worst = worst.max(g);
                }
            }
            assert!(worst.is_finite() && worst < 10.0, "{:?}: {worst}", env.kind);
        }
    }
}
