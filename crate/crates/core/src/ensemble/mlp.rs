//! Fixed-architecture MLP with hand-written reverse-mode gradients.
//!
//! The network maps an input to `2 * out_dim` values: a mean and a log
//! variance per output dimension. Hidden layers use the configured
//! activation, the output layer is linear, and the log variance is clamped
//! to `[LOGVAR_MIN, LOGVAR_MAX]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// Dense layer `y = x W + b` acting on row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// in x out
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Layer { weights: DMatrix::zeros(input, output), bias: DVector::zeros(output) }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weights;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// Gaussian negative log-likelihood with the predicted log variance.
    GaussianNll,
    /// Half squared error of the mean head; the log-variance head is unused.
    Squared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub out_dim: usize,
}

/// Gradient with the same shape as the network's parameters.
pub type Gradient = Vec<Layer>;

impl Mlp {
    /// Builds a network `input -> hidden... -> 2 * out_dim` with truncated
    /// normal weights (std `1/sqrt(fan_in)`, cut at two std) and zero biases.
    pub fn init(input: usize, hidden: &[usize], out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * out_dim);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = 1.0 / (w[0] as f64).sqrt();
                let weights = DMatrix::from_fn(w[0], w[1], |_, _| std * truncated_normal(rng));
                Layer { weights, bias: DVector::zeros(w[1]) }
            })
            .collect();
        Mlp { layers, activation, out_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Returns `(mean, logvar)` for every row of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.apply(|v| *v = self.activation.apply(*v));
            }
        }
        self.split_head(&h)
    }

    fn split_head(&self, out: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.out_dim;
        let mean = out.columns(0, d).into_owned();
        let logvar = out.columns(d, d).map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        (mean, logvar)
    }

    pub fn forward_one(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = DMatrix::from_row_slice(1, z.len(), z);
        let (m, s) = self.forward(&x);
        (m.iter().copied().collect(), s.iter().copied().collect())
    }

    /// Mean loss over the batch and its gradient.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss) -> (f64, Gradient) {
        let b = x.nrows() as f64;
        let d = self.out_dim;
        let last = self.layers.len() - 1;

        // pre-activations of every layer, plus the input
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(acts.last().unwrap());
            let a = if i < last { z.map(|v| self.activation.apply(v)) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().unwrap();

        let mut total = 0.0;
        let mut g = DMatrix::zeros(out.nrows(), 2 * d);
        for r in 0..out.nrows() {
            for j in 0..d {
                let err = out[(r, j)] - y[(r, j)];
                match loss {
                    Loss::Squared => {
                        total += 0.5 * err * err;
                        g[(r, j)] = err / b;
                    }
                    Loss::GaussianNll => {
                        let raw = out[(r, d + j)];
                        let s = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
                        let inv = (-s).exp();
                        total += 0.5 * (err * err * inv + s);
                        g[(r, j)] = err * inv / b;
                        if raw > LOGVAR_MIN && raw < LOGVAR_MAX {
                            g[(r, d + j)] = 0.5 * (1.0 - err * err * inv) / b;
                        }
                    }
                }
            }
        }

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = acts[i].transpose() * &g;
            let gb = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            if i > 0 {
                let mut prev = &g * self.layers[i].weights.transpose();
                prev.zip_apply(&pre[i - 1], |p, z| *p *= self.activation.derivative(z));
                g = prev;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        (total / b, grads)
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss) -> f64 {
        let (mean, logvar) = self.forward(x);
        let b = x.nrows() as f64;
        let mut total = 0.0;
        for r in 0..x.nrows() {
            for j in 0..self.out_dim {
                let err = mean[(r, j)] - y[(r, j)];
                total += match loss {
                    Loss::Squared => 0.5 * err * err,
                    Loss::GaussianNll => 0.5 * (err * err * (-logvar[(r, j)]).exp() + logvar[(r, j)]),
                };
            }
        }
        total / b
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::input("network has non-finite parameters"))
        }
    }
}

fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= 2.0 {
            return v;
        }
    }
}

pub fn mlp_forward(net: &Mlp, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.len() != net.input_dim() {
        return Err(Error::input(format!("network expects inputs of dimension {}, got {}", net.input_dim(), z.len())));
    }
    Ok(net.forward_one(z))
}
