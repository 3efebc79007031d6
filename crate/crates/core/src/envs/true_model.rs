use nalgebra::DMatrix;

use super::EnvSpec;
use crate::statmodel::{BatchPrediction, StatModel};
use crate::{Error, Result};

/// The simulator's own noise-free dynamics behind the model interface:
/// mean `f*(z) - obs`, zero epistemic and aleatoric uncertainty.
#[derive(Clone, Debug)]
pub struct TrueModel {
    env: EnvSpec,
}

impl TrueModel {
    pub fn new(env: EnvSpec) -> Self {
        TrueModel { env }
    }
}

impl StatModel for TrueModel {
    fn input_dim(&self) -> usize {
        self.env.obs_dim() + self.env.action_dim()
    }

    fn output_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn beta(&self) -> f64 {
        0.0
    }

    fn predict_batch(&self, zs: &DMatrix<f64>, _with_epistemic: bool) -> Result<BatchPrediction> {
        if zs.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "true model expects inputs of dimension {}, got {}",
                self.input_dim(),
                zs.ncols()
            )));
        }
        let dx = self.output_dim();
        let mut mean = DMatrix::zeros(zs.nrows(), dx);
        for i in 0..zs.nrows() {
            let z: Vec<f64> = zs.row(i).iter().copied().collect();
            let next = self.env.f_star_obs(&z);
            for j in 0..dx {
                mean[(i, j)] = next[j] - z[j];
            }
        }
        Ok(BatchPrediction { mean, epistemic: DMatrix::zeros(zs.nrows(), dx), aleatoric: vec![0.0; zs.nrows()] })
    }
}
