//! Parameter identification: cost functionals, projected quasi-Newton
//! minimization, the trust-region reduced-basis loop and the full-order
//! reference optimizer.

pub mod bfgs;
pub mod cost;
pub mod data;
pub mod reference;
pub mod tr;

pub use bfgs::{projected_bfgs, projected_gradient_norm, BfgsOptions, BfgsOutcome, Evaluation, Objective, StopReason};
pub use cost::{
    cost_fom, cost_from_states, cost_rom, fom_misfit, grad_cost_fom, grad_cost_rom, tr_ratio, CostConfig, FomCostGrad, FomObjective, RomCost,
    RomObjective,
};
pub use data::{synthetic_data, DataProvenance, MeasurementData};
pub use reference::run_fo_reference;
pub use tr::{agc_point, run_tr_rb, solve_tr_subproblem, AgcPoint, LocalRb, TrConfig, TrIteration, TrOutcome, TrSeed, TrustRegionState};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::problem::Parameter;

/// Accepted iterate of an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub mu: Parameter,
    /// Full-order cost at `mu`.
    pub cost: f64,
    /// Full-order solves spent so far.
    pub fom_evaluations: usize,
}

/// Outcome of an optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimResult {
    pub mu_opt: Parameter,
    pub cost: f64,
    pub iterations: usize,
    /// Full-order state solves, each counted once whether or not sensitivities were added.
    pub fom_evaluations: usize,
    pub elapsed: Duration,
    /// `|mu* - mu_opt|_2` when the true parameter is known.
    pub e_abs: Option<f64>,
    pub e_rel: Option<f64>,
    pub converged: bool,
    /// Final `|mu - P(mu - grad J^h(mu))|_2`.
    pub stationarity: f64,
    pub trace: Vec<TracePoint>,
}

impl OptimResult {
    pub(crate) fn with_truth(mut self, truth: Option<&Parameter>) -> Self {
        if let Some(t) = truth {
            let e = t.distance(&self.mu_opt);
            self.e_abs = Some(e);
            self.e_rel = Some(e / t.norm());
        }
        self
    }
}
