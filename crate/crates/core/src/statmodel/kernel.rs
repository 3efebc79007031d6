use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Linear,
    Matern52,
}

/// Stationary or dot-product covariance function.
///
/// `lengthscale` holds either a single shared value or one value per input
/// dimension. For the linear kernel the lengthscales rescale each coordinate,
/// `k(a, b) = sv * sum_i a_i b_i / l_i^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub lengthscale: Vec<f64>,
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, signal_variance: f64) -> Self {
        KernelSpec { kind: KernelKind::Rbf, lengthscale: vec![lengthscale], signal_variance }
    }

    pub fn linear(signal_variance: f64) -> Self {
        KernelSpec { kind: KernelKind::Linear, lengthscale: vec![1.0], signal_variance }
    }

    pub fn matern52(lengthscale: f64, signal_variance: f64) -> Self {
        KernelSpec { kind: KernelKind::Matern52, lengthscale: vec![lengthscale], signal_variance }
    }

    pub fn with_lengthscales(mut self, lengthscale: Vec<f64>) -> Self {
        self.lengthscale = lengthscale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscale.is_empty() {
            return Err(Error::config("kernel lengthscale list is empty"));
        }
        if self.lengthscale.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::config(format!(
                "kernel lengthscales must be positive and finite, got {:?}",
                self.lengthscale
            )));
        }
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::config(format!(
                "kernel signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.lengthscale.len() != 1 && self.lengthscale.len() != dim {
            return Err(Error::input(format!(
                "kernel has {} lengthscales but inputs have dimension {dim}",
                self.lengthscale.len()
            )));
        }
        Ok(())
    }

    #[inline]
    fn ls(&self, i: usize) -> f64 {
        if self.lengthscale.len() == 1 {
            self.lengthscale[0]
        } else {
            self.lengthscale[i]
        }
    }

    /// Prior variance `k(z, z)`.
    pub fn diag(&self, z: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf | KernelKind::Matern52 => self.signal_variance,
            KernelKind::Linear => self.eval_unchecked(z, z),
        }
    }

    #[inline]
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => {
                let dot: f64 = a.iter().zip(b).enumerate().map(|(i, (x, y))| x * y / (self.ls(i) * self.ls(i))).sum();
                self.signal_variance * dot
            }
            KernelKind::Rbf => {
                let r2 = self.scaled_sq_dist(a, b);
                self.signal_variance * (-0.5 * r2).exp()
            }
            KernelKind::Matern52 => {
                let r = self.scaled_sq_dist(a, b).sqrt();
                let s5r = 5f64.sqrt() * r;
                self.signal_variance * (1.0 + s5r + 5.0 * r * r / 3.0) * (-s5r).exp()
            }
        }
    }

    #[inline]
    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| {
                let d = (x - y) / self.ls(i);
                d * d
            })
            .sum()
    }

    /// Kernel matrix between the rows of `a` (m x d) and the rows of `b` (n x d).
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != b.ncols() {
            return Err(Error::input(format!("kernel inputs have dimensions {} and {}", a.ncols(), b.ncols())));
        }
        self.check_dim(a.ncols())?;
        let (m, n, d) = (a.nrows(), b.nrows(), a.ncols());
        if self.kind == KernelKind::Linear {
            let rows_a: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
            let rows_b: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
            return Ok(DMatrix::from_fn(m, n, |i, j| self.eval_unchecked(&rows_a[i], &rows_b[j])));
        }
        // Stationary kernels: rescale once, then fill column by column with
        // the coordinates of `a` laid out per dimension.
        let inv: Vec<f64> = (0..d).map(|i| 1.0 / self.ls(i)).collect();
        let cols_a: Vec<Vec<f64>> = (0..d).map(|k| a.column(k).iter().map(|v| v * inv[k]).collect()).collect();
        let mut out = DMatrix::zeros(m, n);
        let mut r2 = vec![0.0; m];
        for j in 0..n {
            r2.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d {
                let bj = b[(j, k)] * inv[k];
                for (acc, ai) in r2.iter_mut().zip(&cols_a[k]) {
                    let diff = ai - bj;
                    *acc += diff * diff;
                }
            }
            let col = out.column_mut(j);
            for (o, &q) in col.into_iter().zip(&r2) {
                *o = self.of_sq_dist(q);
            }
        }
        Ok(out)
    }

    #[inline]
    fn of_sq_dist(&self, r2: f64) -> f64 {
        match self.kind {
            KernelKind::Rbf => self.signal_variance * (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let r = r2.sqrt();
                let s5r = 5f64.sqrt() * r;
                self.signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
            KernelKind::Linear => unreachable!("linear kernel is not stationary"),
        }
    }

    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.ncols())?;
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        let n = rows.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(&rows[i], &rows[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }
}

/// Evaluates `k(z1, z2)`.
pub fn kernel_eval(k: &KernelSpec, z1: &[f64], z2: &[f64]) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(Error::input(format!("kernel inputs have dimensions {} and {}", z1.len(), z2.len())));
    }
    k.check_dim(z1.len())?;
    Ok(k.eval_unchecked(z1, z2))
}
