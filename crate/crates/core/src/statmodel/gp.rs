//! Exact Gaussian-process regression with a vector-valued output.
//!
//! Each output dimension is an independent GP, and all of them share one
//! kernel matrix, so a single Cholesky factor serves every output:
//!
//! ```text
//! mu_j(z)    = k_n(z)^T (K_n + s^2 I)^-1 y_j
//! sigma^2(z) = k(z, z) - k_n(z)^T (K_n + s^2 I)^-1 k_n(z)
//! ```
//!
//! The model is refit from scratch whenever the dataset changes.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::{BatchPrediction, Dataset, KernelSpec, StatModel};
use crate::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

/// Cholesky factor of `a + jitter * I`, escalating the jitter tenfold from
/// `1e-8 * scale` up to `1e-2 * scale` until the factorization succeeds.
/// The first attempt uses no jitter. Returns the factor and the jitter used.
pub(crate) fn robust_cholesky(a: &DMatrix<f64>, scale: f64, what: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START * scale;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        if jitter >= JITTER_MAX * scale * (1.0 - 1e-12) {
            return Err(Error::Numeric { what: what.to_string(), jitter });
        }
        jitter *= 10.0;
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_sigma: f64,
    beta: f64,
    input_dim: usize,
    output_dim: usize,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Transposed inverse of the Cholesky factor, `L^-T`.
    chol_inv_t: DMatrix<f64>,
    alpha: DMatrix<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn fit(data: &Dataset, kernel: KernelSpec, noise_sigma: f64, beta: f64) -> Result<Self> {
        kernel.validate()?;
        if !(noise_sigma > 0.0) || !noise_sigma.is_finite() {
            return Err(Error::config(format!("GP noise sigma must be positive, got {noise_sigma}")));
        }
        if !(beta >= 0.0) {
            return Err(Error::config(format!("confidence width beta must be >= 0, got {beta}")));
        }
        let inputs = data.inputs_matrix();
        let targets = data.targets_matrix();
        let n = inputs.nrows();

        let mut k = kernel.gram(&inputs)?;
        for i in 0..n {
            k[(i, i)] += noise_sigma * noise_sigma;
        }
        let (chol, jitter) = robust_cholesky(&k, kernel.signal_variance, "GP kernel matrix")?;
        let alpha = chol.solve(&targets);
        let l = chol.unpack();
        let chol_inv_t = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Numeric { what: "GP factor inverse".into(), jitter })?
            .transpose();

        Ok(GpModel {
            kernel,
            noise_sigma,
            beta,
            input_dim: data.input_dim,
            output_dim: data.output_dim,
            inputs,
            targets,
            chol: l,
            chol_inv_t,
            alpha,
            jitter,
        })
    }

    /// Fits one model per lengthscale multiplier and keeps the one with the
    /// highest log marginal likelihood. An empty grid is a plain fit.
    pub fn fit_with_lengthscale_search(
        data: &Dataset,
        kernel: KernelSpec,
        noise_sigma: f64,
        beta: f64,
        multipliers: &[f64],
    ) -> Result<Self> {
        if multipliers.is_empty() || data.is_empty() {
            return Self::fit(data, kernel, noise_sigma, beta);
        }
        let mut best: Option<(f64, GpModel)> = None;
        for &m in multipliers {
            let mut k = kernel.clone();
            k.lengthscale.iter_mut().for_each(|l| *l *= m);
            let model = Self::fit(data, k, noise_sigma, beta)?;
            let lml = model.log_marginal_likelihood();
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, model));
            }
        }
        Ok(best.expect("nonempty grid").1)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Lower-triangular factor of `K_n + s^2 I` (plus any jitter).
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Solve vectors `(K_n + s^2 I)^-1 y_j`, one column per output.
    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// Sum over outputs of `log p(y_j | X)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let log_det_half: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        (0..self.output_dim)
            .map(|j| {
                let fit = self.targets.column(j).dot(&self.alpha.column(j));
                -0.5 * fit - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    }

    fn check_inputs(&self, zs: &DMatrix<f64>) -> Result<()> {
        if zs.ncols() != self.input_dim {
            return Err(Error::input(format!("GP expects inputs of dimension {}, got {}", self.input_dim, zs.ncols())));
        }
        Ok(())
    }

    /// `L^-1 k_n(Z)` for every row of `zs`, stored row-wise (m x n).
    ///
    /// `L^-T` is upper triangular, so column block `J` of the product only
    /// needs the leading columns of `kstar`.
    fn whitened_cross(&self, kstar: &DMatrix<f64>) -> DMatrix<f64> {
        const BLOCK: usize = 128;
        let n = self.len();
        let mut w = DMatrix::zeros(kstar.nrows(), n);
        let mut j0 = 0;
        while j0 < n {
            let width = BLOCK.min(n - j0);
            let j1 = j0 + width;
            w.columns_mut(j0, width).gemm(1.0, &kstar.columns(0, j1), &self.chol_inv_t.view((0, j0), (j1, width)), 0.0);
            j0 = j1;
        }
        w
    }

    /// Joint posterior covariance of the latent function at the rows of
    /// `points` (shared by every output dimension).
    pub fn posterior_covariance(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(points)?;
        let prior = self.kernel.gram(points)?;
        if self.is_empty() {
            return Ok(prior);
        }
        let kstar = self.kernel.cross(points, &self.inputs)?;
        let w = self.whitened_cross(&kstar);
        Ok(prior - &w * w.transpose())
    }

    /// Information gained about one output dimension by observing the rows
    /// of `points` with noise, given the data this model was fit on:
    /// `0.5 log det(I + s^-2 Sigma_post)`.
    pub fn conditional_information_gain(&self, points: &DMatrix<f64>) -> Result<f64> {
        let cov = self.posterior_covariance(points)?;
        log_det_half_identity_plus(&cov, self.noise_sigma, self.kernel.signal_variance)
    }
}

fn log_det_half_identity_plus(cov: &DMatrix<f64>, noise_sigma: f64, scale: f64) -> Result<f64> {
    let m = cov.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    let inv_s2 = 1.0 / (noise_sigma * noise_sigma);
    let mut a = cov * inv_s2;
    for i in 0..m {
        a[(i, i)] += 1.0;
    }
    let (chol, _) = robust_cholesky(&a, scale * inv_s2, "information gain matrix")?;
    // 0.5 log det A = sum log L_ii
    Ok(chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>().max(0.0))
}

impl StatModel for GpModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn predict_batch(&self, zs: &DMatrix<f64>, with_epistemic: bool) -> Result<BatchPrediction> {
        self.check_inputs(zs)?;
        let m = zs.nrows();
        let prior_var = |i: usize| {
            let z: Vec<f64> = zs.row(i).iter().copied().collect();
            self.kernel.diag(&z)
        };
        if self.is_empty() {
            let epistemic = if with_epistemic {
                DMatrix::from_fn(m, self.output_dim, |i, _| prior_var(i).max(0.0).sqrt())
            } else {
                DMatrix::zeros(m, self.output_dim)
            };
            return Ok(BatchPrediction {
                mean: DMatrix::zeros(m, self.output_dim),
                epistemic,
                aleatoric: vec![self.noise_sigma; m],
            });
        }
        let kstar = self.kernel.cross(zs, &self.inputs)?;
        let mean = &kstar * &self.alpha;
        let epistemic = if with_epistemic {
            let w = self.whitened_cross(&kstar);
            let mut explained = vec![0.0; m];
            for col in w.column_iter() {
                for (e, v) in explained.iter_mut().zip(col.iter()) {
                    *e += v * v;
                }
            }
            let var: Vec<f64> = (0..m).map(|i| (prior_var(i) - explained[i]).max(0.0)).collect();
            DMatrix::from_fn(m, self.output_dim, |i, _| var[i].sqrt())
        } else {
            DMatrix::zeros(m, self.output_dim)
        };
        Ok(BatchPrediction { mean, epistemic, aleatoric: vec![self.noise_sigma; m] })
    }
}

pub fn gp_fit(data: &Dataset, kernel: KernelSpec, noise_sigma: f64, beta: f64) -> Result<GpModel> {
    GpModel::fit(data, kernel, noise_sigma, beta)
}

pub fn gp_predict(model: &GpModel, z: &[f64]) -> Result<super::Prediction> {
    model.predict(z)
}

/// `0.5 log det(I + s^-2 K)` for the Gram matrix of `points`: the mutual
/// information between one GP output and noisy observations at `points`.
pub fn information_gain(kernel: &KernelSpec, noise_sigma: f64, points: &[Vec<f64>]) -> Result<f64> {
    if !(noise_sigma > 0.0) {
        return Err(Error::config(format!("noise sigma must be positive, got {noise_sigma}")));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::input("information gain points have mixed dimensions"));
    }
    let x = DMatrix::from_fn(points.len(), d, |i, j| points[i][j]);
    let k = kernel.gram(&x)?;
    log_det_half_identity_plus(&k, noise_sigma, kernel.signal_variance)
}
