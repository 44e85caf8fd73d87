//! Measurement data for the identification problem.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::FullOrderModel;
use crate::problem::Parameter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataProvenance {
    Synthetic { mu_star: Parameter, noise_variance: f64, seed: u64 },
    External { source: String },
}

/// Observations `w^k` of `q` at every time node, one `V0` column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementData {
    pub w: DMatrix<f64>,
    pub provenance: DataProvenance,
}

impl MeasurementData {
    pub fn new(w: DMatrix<f64>, provenance: DataProvenance) -> Self {
        Self { w, provenance }
    }

    /// Checks the shape against the model's `V0` dimension and time grid.
    pub fn validate(&self, model: &FullOrderModel) -> Result<()> {
        if self.w.nrows() != model.dim_v0() || self.w.ncols() != model.grid.len() {
            return Err(Error::InvalidInput(format!(
                "data has shape {}x{}, expected {}x{}",
                self.w.nrows(),
                self.w.ncols(),
                model.dim_v0(),
                model.grid.len()
            )));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn true_parameter(&self) -> Option<Parameter> {
        match self.provenance {
            DataProvenance::Synthetic { mu_star, .. } => Some(mu_star),
            DataProvenance::External { .. } => None,
        }
    }
}

/// `q(mu*)` plus i.i.d. Gaussian nodal noise with the given variance.
pub fn synthetic_data(model: &FullOrderModel, mu_star: &Parameter, noise_variance: f64, seed: u64) -> Result<MeasurementData> {
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::InvalidInput(format!("noise variance must be non-negative, got {noise_variance}")));
    }
    if !model.problem.bounds.contains(mu_star) {
        return Err(Error::InvalidInput(format!("true parameter {mu_star} lies outside the admissible box")));
    }
    let traj = model.solve(mu_star).map_err(|e| e.at(*mu_star))?;
    let mut w = traj.q;
    if noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        // column-major: all nodes of t_0, then t_1, ...
        for v in w.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(MeasurementData { w, provenance: DataProvenance::Synthetic { mu_star: *mu_star, noise_variance, seed } })
}
