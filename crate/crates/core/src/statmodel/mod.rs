//! Calibrated statistical models of the unknown dynamics.
//!
//! A [`StatModel`] maps an input `z = (x, u)` to a mean, a per-dimension
//! epistemic standard deviation and an aleatoric noise level. The width
//! multiplier [`StatModel::beta`] turns `mean +- beta * epistemic` into a
//! confidence band that the planners and the calibration metric rely on.

mod gp;
mod kernel;

pub use gp::{gp_fit, gp_predict, information_gain, GpModel};
pub use kernel::{kernel_eval, KernelKind, KernelSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::{Error, Result};

/// Regression pairs `(z_i, y_i)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input_dim: usize,
    pub output_dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Dataset { input_dim, output_dim, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, z: Vec<f64>, y: Vec<f64>) -> Result<()> {
        if z.len() != self.input_dim || y.len() != self.output_dim {
            return Err(Error::input(format!(
                "dataset expects ({}, {}) dimensional pairs, got ({}, {})",
                self.input_dim,
                self.output_dim,
                z.len(),
                y.len()
            )));
        }
        self.inputs.push(z);
        self.targets.push(y);
        Ok(())
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.input_dim != self.input_dim || other.output_dim != self.output_dim {
            return Err(Error::input("cannot merge datasets of different shapes"));
        }
        self.inputs.extend(other.inputs.iter().cloned());
        self.targets.extend(other.targets.iter().cloned());
        Ok(())
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            inputs: self.inputs[..n].to_vec(),
            targets: self.targets[..n].to_vec(),
        }
    }

    pub fn inputs_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.inputs, self.input_dim)
    }

    pub fn targets_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.targets, self.output_dim)
    }

    /// Transition data `((x, u), x')` turned into `((x, u), x' - x)`, where
    /// `x` is the leading `output_dim` entries of each input.
    pub fn to_deltas(&self) -> Dataset {
        let targets =
            self.inputs.iter().zip(&self.targets).map(|(z, y)| y.iter().zip(z).map(|(a, b)| a - b).collect()).collect();
        Dataset { targets, ..self.clone() }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub aleatoric: f64,
}

/// Predictions for a batch of inputs, one row per input.
#[derive(Clone, Debug)]
pub struct BatchPrediction {
    pub mean: DMatrix<f64>,
    /// All zeros when epistemic uncertainty was not requested.
    pub epistemic: DMatrix<f64>,
    pub aleatoric: Vec<f64>,
}

impl BatchPrediction {
    pub fn row(&self, i: usize) -> Prediction {
        Prediction {
            mean: self.mean.row(i).iter().copied().collect(),
            epistemic: self.epistemic.row(i).iter().copied().collect(),
            aleatoric: self.aleatoric[i],
        }
    }
}

/// Shared interface of the GP and ensemble backends.
///
/// Implementations are immutable after fitting and safe to share across
/// planner workers.
pub trait StatModel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Confidence width multiplier.
    fn beta(&self) -> f64;

    /// Predicts every row of `zs`. When `with_epistemic` is false the
    /// backend may skip the uncertainty computation and return zeros.
    fn predict_batch(&self, zs: &DMatrix<f64>, with_epistemic: bool) -> Result<BatchPrediction>;

    fn predict(&self, z: &[f64]) -> Result<Prediction> {
        let zs = DMatrix::from_row_slice(1, z.len(), z);
        Ok(self.predict_batch(&zs, true)?.row(0))
    }

    fn as_ensemble(&self) -> Option<&Ensemble> {
        None
    }
}

/// Fraction of `(z, j)` pairs with `|mean_j(z) - f_j(z)| <= beta * sigma_j(z)`.
pub fn calibration_coverage(model: &dyn StatModel, truth: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::input("calibration coverage needs at least one point"));
    }
    let zs = DMatrix::from_fn(truth.len(), model.input_dim(), |i, j| truth[i].0[j]);
    let pred = model.predict_batch(&zs, true)?;
    let beta = model.beta();
    let mut covered = 0usize;
    let mut total = 0usize;
    for (i, (_, f)) in truth.iter().enumerate() {
        for (j, fj) in f.iter().enumerate() {
            let err = (pred.mean[(i, j)] - fj).abs();
            if beta.is_infinite() || err <= beta * pred.epistemic[(i, j)] {
                covered += 1;
            }
            total += 1;
        }
    }
    Ok(covered as f64 / total as f64)
}
