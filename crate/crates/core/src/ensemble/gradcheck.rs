//! Central finite-difference check of the hand-written backward pass.

use nalgebra::DMatrix;
use rand::Rng;

use super::mlp::{Loss, Mlp};

/// Outcome of comparing analytic and numeric partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares `loss_and_grad` against central differences with step `h` on
/// `per_layer` randomly chosen weights and biases of every layer.
pub fn gradient_check(
    net: &Mlp,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    loss: Loss,
    per_layer: usize,
    h: f64,
    rng: &mut impl Rng,
) -> GradCheck {
    let (_, grad) = net.loss_and_grad(x, y, loss);
    let mut probe = net.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    for (l, layer) in net.layers.iter().enumerate() {
        let nw = layer.weights.len();
        let total = nw + layer.bias.len();
        for _ in 0..per_layer {
            let k = rng.random_range(0..total);
            let analytic = if k < nw { grad[l].weights[k] } else { grad[l].bias[k - nw] };
            let mut at = |delta: f64| {
                let p = &mut probe.layers[l];
                let v = if k < nw { &mut p.weights[k] } else { &mut p.bias[k - nw] };
                let orig = *v;
                *v = orig + delta;
                let f = probe.loss(x, y, loss);
                let p = &mut probe.layers[l];
                if k < nw {
                    p.weights[k] = orig;
                } else {
                    p.bias[k - nw] = orig;
                }
                f
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel_error = max_rel_error.max(rel);
            checked += 1;
        }
    }
    GradCheck { checked, max_rel_error }
}
