use super::mlp::{Gradient, Layer, Mlp};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros =
            || net.layers.iter().map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols())).collect::<Vec<_>>();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, net: &mut Mlp, grad: &Gradient) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            apply(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
            );
            apply(layer.bias.as_mut_slice(), g.bias.as_slice(), m.bias.as_mut_slice(), v.bias.as_mut_slice());
        }
    }
}
