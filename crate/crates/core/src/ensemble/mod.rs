//! Probabilistic ensembles.
//!
//! `K` MLPs share one architecture and differ only in initialization and
//! mini-batch order. Each predicts a Gaussian per output dimension; the
//! spread of the member means is the epistemic uncertainty.

mod adam;
mod gradcheck;
mod mlp;
mod normalizer;

pub use adam::Adam;
pub use gradcheck::{gradient_check, GradCheck};
pub use mlp::{mlp_forward, Activation, Gradient, Layer, Loss, Mlp, LOGVAR_MAX, LOGVAR_MIN};
pub use normalizer::Normalizer;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::statmodel::{BatchPrediction, Dataset, Prediction, StatModel};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub max_gradient_steps: usize,
    pub beta: f64,
}

impl Default for EnsembleConfig {
    /// Pendulum settings: 7 members of 2 x 256 units.
    fn default() -> Self {
        EnsembleConfig {
            members: 7,
            hidden_layers: 2,
            hidden_units: 256,
            activation: Activation::Silu,
            batch_size: 64,
            learning_rate: 5e-4,
            epochs: 50,
            max_gradient_steps: 5000,
            beta: 2.0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 1 {
            return Err(Error::config("ensemble needs at least one member"));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.max_gradient_steps < 1 {
            return Err(Error::config("epochs, batch size and gradient-step cap must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }

    /// Number of optimizer steps for `n` training rows: the steps implied by
    /// the epoch count, capped at `max_gradient_steps`.
    pub fn gradient_steps(&self, n: usize) -> usize {
        let per_epoch = n.div_ceil(self.batch_size).max(1);
        (self.epochs * per_epoch).min(self.max_gradient_steps)
    }
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<Mlp>,
    input_norm: Normalizer,
    output_norm: Normalizer,
    beta: f64,
}

impl Ensemble {
    /// Assembles an ensemble from already-built networks with identity
    /// normalization.
    pub fn from_members(members: Vec<Mlp>, beta: f64) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::input("ensemble has no members"))?;
        let (din, dout) = (first.input_dim(), first.out_dim);
        if members.iter().any(|m| m.input_dim() != din || m.out_dim != dout) {
            return Err(Error::input("ensemble members must share one architecture"));
        }
        Ok(Ensemble { members, input_norm: Normalizer::identity(din), output_norm: Normalizer::identity(dout), beta })
    }

    /// Freshly initialized members, as `ensemble_fit` would start from,
    /// before any data has been seen.
    pub fn untrained(cfg: &EnsembleConfig, input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
        let members = (0..cfg.members)
            .map(|m| Mlp::init(input_dim, &hidden, output_dim, cfg.activation, &mut rng::stream(seed, &[m as u64])))
            .collect();
        Self::from_members(members, cfg.beta)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    /// Denormalized per-member means and standard deviations for the rows
    /// of `zs`.
    pub fn member_moments(&self, idx: usize, zs: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let net = self
            .members
            .get(idx)
            .ok_or_else(|| Error::input(format!("member index {idx} out of range for {} members", self.len())))?;
        if zs.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "ensemble expects inputs of dimension {}, got {}",
                self.input_dim(),
                zs.ncols()
            )));
        }
        let (m, s) = net.forward(&self.input_norm.normalize(zs));
        let mean = self.output_norm.denormalize(&m);
        let std = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| (0.5 * s[(i, j)]).exp() * self.output_norm.std[j]);
        Ok((mean, std))
    }

    /// One draw from member `idx`'s predictive Gaussian at `z`.
    pub fn member_predict(&self, idx: usize, z: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let zs = DMatrix::from_row_slice(1, z.len(), z);
        let (mean, std) = self.member_moments(idx, &zs)?;
        Ok((0..mean.ncols())
            .map(|j| {
                let e: f64 = StandardNormal.sample(rng);
                mean[(0, j)] + std[(0, j)] * e
            })
            .collect())
    }
}

impl StatModel for Ensemble {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.members[0].out_dim
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn predict_batch(&self, zs: &DMatrix<f64>, _with_epistemic: bool) -> Result<BatchPrediction> {
        let k = self.len() as f64;
        let (rows, d) = (zs.nrows(), self.output_dim());
        // moments of the member means shifted by member 0, which keeps the
        // disagreement exactly zero when all members agree
        let (base, _) = self.member_moments(0, zs)?;
        let mut shift_sum = DMatrix::zeros(rows, d);
        let mut shift_sq = DMatrix::zeros(rows, d);
        let mut std_sum = vec![0.0; rows];
        for idx in 0..self.len() {
            let (mean, std) = self.member_moments(idx, zs)?;
            let diff = mean - &base;
            shift_sq += diff.component_mul(&diff);
            shift_sum += diff;
            for (i, acc) in std_sum.iter_mut().enumerate() {
                *acc += std.row(i).sum() / d as f64;
            }
        }
        let mean = &base + &shift_sum / k;
        // population std of member means
        let epistemic = DMatrix::from_fn(rows, d, |i, j| {
            let m = shift_sum[(i, j)] / k;
            (shift_sq[(i, j)] / k - m * m).max(0.0).sqrt()
        });
        let aleatoric = std_sum.into_iter().map(|s| s / k).collect();
        Ok(BatchPrediction { mean, epistemic, aleatoric })
    }

    fn as_ensemble(&self) -> Option<&Ensemble> {
        Some(self)
    }
}

fn train_member(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &EnsembleConfig, member: usize, seed: u64) -> Result<Mlp> {
    let mut r = rng::stream(seed, &[member as u64]);
    let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
    let mut net = Mlp::init(x.ncols(), &hidden, y.ncols(), cfg.activation, &mut r);
    let mut opt = Adam::new(&net, cfg.learning_rate);
    let n = x.nrows();
    let total = cfg.gradient_steps(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = 0;
    'outer: loop {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            if steps == total {
                break 'outer;
            }
            let bx = x.select_rows(batch);
            let by = y.select_rows(batch);
            let (loss, grad) = net.loss_and_grad(&bx, &by, Loss::GaussianNll);
            if !loss.is_finite() {
                return Err(Error::Training { member, reason: format!("loss became {loss} at step {steps}") });
            }
            opt.update(&mut net, &grad);
            steps += 1;
        }
    }
    net.check_finite().map_err(|_| Error::Training { member, reason: "non-finite weights".into() })?;
    Ok(net)
}

/// Trains every member with Gaussian NLL on its own shuffled mini-batches.
/// Inputs and targets are standardized with statistics of `data`.
pub fn ensemble_fit(data: &Dataset, cfg: &EnsembleConfig, seed: u64) -> Result<Ensemble> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::input("cannot fit an ensemble on an empty dataset"));
    }
    let xr = data.inputs_matrix();
    let yr = data.targets_matrix();
    let input_norm = Normalizer::fit(&xr);
    let output_norm = Normalizer::fit(&yr);
    let x = input_norm.normalize(&xr);
    let y = output_norm.normalize(&yr);
    let members =
        (0..cfg.members).into_par_iter().map(|m| train_member(&x, &y, cfg, m, seed)).collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members, input_norm, output_norm, beta: cfg.beta })
}

pub fn ensemble_predict(e: &Ensemble, z: &[f64]) -> Result<Prediction> {
    e.predict(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_member(mean: f64, logvar: f64) -> Mlp {
        let mut layer = Layer::zeros(1, 2);
        layer.bias[0] = mean;
        layer.bias[1] = logvar;
        Mlp { layers: vec![layer], activation: Activation::Relu, out_dim: 1 }
    }

    #[test]
    fn identical_members_have_no_disagreement() {
        let e = Ensemble::from_members(vec![constant_member(0.7, 0.0); 4], 1.0).unwrap();
        let p = ensemble_predict(&e, &[0.3]).unwrap();
        assert_eq!(p.epistemic, vec![0.0]);
        assert!((p.mean[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn two_point_population_std() {
        let e = Ensemble::from_members(vec![constant_member(1.0, 0.0), constant_member(-1.0, 0.0)], 1.0).unwrap();
        let p = ensemble_predict(&e, &[0.0]).unwrap();
        assert_eq!(p.mean, vec![0.0]);
        assert_eq!(p.epistemic, vec![1.0]);
        assert_eq!(p.aleatoric, 1.0);
    }

    #[test]
    fn member_index_is_checked() {
        let e = Ensemble::from_members(vec![constant_member(1.0, 0.0); 2], 1.0).unwrap();
        let mut r = rng::stream(0, &[]);
        assert!(matches!(e.member_predict(2, &[0.0], &mut r), Err(Error::Input(_))));
    }

    #[test]
    fn member_draw_at_variance_floor_is_reproducible() {
        let e = Ensemble::from_members(vec![constant_member(0.5, -40.0), constant_member(-0.5, 0.0)], 1.0).unwrap();
        let a = e.member_predict(0, &[0.0], &mut rng::stream(3, &[])).unwrap();
        let b = e.member_predict(0, &[0.0], &mut rng::stream(3, &[])).unwrap();
        assert_eq!(a, b);
        assert!((a[0] - 0.5).abs() < 0.05);
        let c = e.member_predict(1, &[0.0], &mut rng::stream(3, &[])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gradient_step_rule() {
        let cfg = EnsembleConfig { batch_size: 64, epochs: 50, max_gradient_steps: 5000, ..Default::default() };
        assert_eq!(cfg.gradient_steps(200), 200);
        assert_eq!(cfg.gradient_steps(20_000), 5000);
    }

    #[test]
    fn empty_data_and_bad_config_are_rejected() {
        let cfg = EnsembleConfig::default();
        assert!(ensemble_fit(&Dataset::new(1, 1), &cfg, 0).is_err());
        let bad = EnsembleConfig { members: 0, ..Default::default() };
        let mut d = Dataset::new(1, 1);
        d.push(vec![0.0], vec![0.0]).unwrap();
        assert!(ensemble_fit(&d, &bad, 0).is_err());
    }

    #[test]
    fn divergence_names_the_member() {
        let cfg = EnsembleConfig {
            members: 2,
            hidden_layers: 1,
            hidden_units: 4,
            learning_rate: 1e300,
            epochs: 5,
            ..Default::default()
        };
        let mut d = Dataset::new(1, 1);
        for i in 0..20 {
            d.push(vec![i as f64], vec![(i * i) as f64]).unwrap();
        }
        match ensemble_fit(&d, &cfg, 1) {
            Err(Error::Training { member, .. }) => assert!(member < 2),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    fn linear_data(n: usize, dup: usize) -> Dataset {
        let mut d = Dataset::new(1, 1);
        for i in 0..n {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            for _ in 0..dup {
                d.push(vec![x], vec![0.5 * x]).unwrap();
            }
        }
        d
    }

    fn small_cfg(members: usize) -> EnsembleConfig {
        EnsembleConfig {
            members,
            hidden_layers: 2,
            hidden_units: 64,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 16,
            ..Default::default()
        }
    }

    fn test_rmse(e: &Ensemble) -> f64 {
        let xs: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        let se: f64 = xs.iter().map(|&x| (e.predict(&[x]).unwrap().mean[0] - 0.5 * x).powi(2)).sum();
        (se / xs.len() as f64).sqrt()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut r = rng::stream(11, &[]);
        let x = DMatrix::from_fn(6, 3, |_, _| r.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(6, 2, |_, _| r.random_range(-1.0..1.0));
        for act in [Activation::Relu, Activation::Silu, Activation::Tanh] {
            for loss in [Loss::Squared, Loss::GaussianNll] {
                let mut net = Mlp::init(3, &[8, 8], 2, act, &mut r);
                for l in &mut net.layers {
                    l.bias.apply(|b| *b = r.random_range(-0.3..0.3));
                }
                let check = gradient_check(&net, &x, &y, loss, 20, 1e-5, &mut r);
                assert_eq!(check.checked, 60);
                assert!(check.passes(1e-4), "{act:?} {loss:?}: {}", check.max_rel_error);
            }
        }
    }

    #[test]
    fn fits_a_line() {
        let e = ensemble_fit(&linear_data(200, 1), &small_cfg(5), 0).unwrap();
        let rmse = test_rmse(&e);
        assert!(rmse <= 0.05, "rmse {rmse}");
    }

    #[test]
    fn duplicated_data_fits_as_well() {
        let once = test_rmse(&ensemble_fit(&linear_data(200, 1), &small_cfg(3), 4).unwrap());
        let twice = test_rmse(&ensemble_fit(&linear_data(200, 2), &small_cfg(3), 4).unwrap());
        assert!(twice <= 2.0 * once && once <= 2.0 * twice, "{once} vs {twice}");
    }

    #[test]
    fn single_member_has_no_epistemic() {
        let e = ensemble_fit(&linear_data(50, 1), &small_cfg(1), 2).unwrap();
        for x in [-3.0, 0.0, 0.4, 5.0] {
            assert_eq!(e.predict(&[x]).unwrap().epistemic, vec![0.0]);
        }
    }

    #[test]
    fn disagreement_grows_away_from_data() {
        let mut d = Dataset::new(1, 1);
        for i in 0..200 {
            let x = -1.0 + 2.0 * i as f64 / 199.0;
            d.push(vec![x], vec![(3.0 * x).sin()]).unwrap();
        }
        let e = ensemble_fit(&d, &small_cfg(5), 7).unwrap();
        let mut inside: Vec<f64> =
            (0..41).map(|i| e.predict(&[-1.0 + 0.05 * i as f64]).unwrap().epistemic[0]).collect();
        inside.sort_by(f64::total_cmp);
        let median = inside[inside.len() / 2];
        for x in [-4.0, 4.0] {
            let far = e.predict(&[x]).unwrap().epistemic[0];
            assert!(far >= 3.0 * median, "x={x}: {far} vs median {median}");
        }
    }

    #[test]
    fn member_draws_have_the_predicted_variance() {
        let logvar = -1.3;
        let e = Ensemble::from_members(vec![constant_member(0.2, logvar), constant_member(-0.2, 0.0)], 1.0).unwrap();
        let mut r = rng::stream(5, &[]);
        let draws: Vec<f64> = (0..10_000).map(|_| e.member_predict(0, &[0.0], &mut r).unwrap()[0]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let expected = f64::exp(logvar);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}
