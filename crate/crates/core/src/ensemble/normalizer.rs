use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

const STD_FLOOR: f64 = 1e-8;

/// Per-column standardization fitted on a data matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Normalizer { mean, std }
    }

    pub fn normalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn denormalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * self.std[j] + self.mean[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_identity(vals in prop::collection::vec(-1e3f64..1e3, 12)) {
            let x = DMatrix::from_vec(4, 3, vals);
            let n = Normalizer::fit(&x);
            let back = n.denormalize(&n.normalize(&x));
            for (a, b) in x.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_column_uses_floor() {
        let x = DMatrix::from_element(5, 1, 2.0);
        let n = Normalizer::fit(&x);
        assert_eq!(n.std[0], STD_FLOOR);
        assert_eq!(n.normalize(&x)[(0, 0)], 0.0);
    }
}
