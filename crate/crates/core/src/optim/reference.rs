//! Full-order reference optimizer.

use std::time::Instant;

use super::bfgs::{projected_bfgs, projected_gradient_norm, BfgsOptions, StopReason};
use super::cost::{CostConfig, FomObjective};
use super::data::MeasurementData;
use super::{OptimResult, TracePoint};
use crate::error::Result;
use crate::fom::FullOrderModel;
use crate::problem::Parameter;

/// Projected BFGS on the full-order cost from `start`. Every objective
/// evaluation is one state solve plus sensitivities.
pub fn run_fo_reference(
    model: &FullOrderModel,
    data: &MeasurementData,
    cfg: &CostConfig,
    start: &Parameter,
    opts: &BfgsOptions,
) -> Result<OptimResult> {
    cfg.validate()?;
    data.validate(model)?;
    let clock = Instant::now();
    let bounds = &model.problem.bounds;
    let mut obj = FomObjective::new(model, data, *cfg);
    let out = projected_bfgs(&mut obj, bounds, start, None, opts)?;
    if out.reason == StopReason::LineSearch {
        log::warn!("full-order line search failed at {}", out.mu);
    }
    let stationarity = projected_gradient_norm(bounds, &out.mu, &out.eval.grad);
    let result = OptimResult {
        mu_opt: out.mu,
        cost: out.eval.value,
        iterations: out.iterations,
        fom_evaluations: obj.evaluations,
        elapsed: clock.elapsed(),
        e_abs: None,
        e_rel: None,
        converged: out.reason == StopReason::Converged,
        stationarity,
        trace: out
            .trace
            .iter()
            .enumerate()
            .map(|(i, &(mu, cost, evals))| TracePoint { iteration: i, mu, cost, fom_evaluations: evals })
            .collect(),
    };
    Ok(result.with_truth(data.true_parameter().as_ref()))
}
