use thiserror::Error;

use crate::problem::Parameter;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coefficient {name} is not positive at x = {x} (value {value})")]
    NonPositiveCoefficient { name: &'static str, x: f64, value: f64 },

    #[error("matrix is singular (pivot {pivot})")]
    Singular { pivot: usize },

    #[error("Newton iteration did not converge at time step {step} (residual {residual:e})")]
    NewtonDiverged { step: usize, residual: f64 },

    #[error("elliptic Newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("state y lost positivity at time step {step} (min {min:e})")]
    PositivityLost { step: usize, min: f64 },

    #[error("rank deficient snapshot set: requested {requested}, numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("saturation constant must lie in [0, 1), got {0}")]
    InvalidSaturation(f64),

    #[error("saturation enforcement exhausted after {iterations} rounds (sigma_y = {sigma_y}, sigma_q = {sigma_q})")]
    SaturationExhausted { iterations: usize, sigma_y: f64, sigma_q: f64 },

    #[error("full-order solve failed at mu = {mu:?}: {source}")]
    AtParameter {
        mu: Parameter,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, mu: Parameter) -> Self {
        Error::AtParameter { mu, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
