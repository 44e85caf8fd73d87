//! Tracking cost `J(mu) = alpha/2 sum_k alpha_k |q^k - w^k|_{Mq}^2 + lambda/2 |mu - mu_ref|^2`
//! and its gradient, for full-order and reduced states.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bfgs::{Evaluation, Objective};
use super::data::MeasurementData;
use crate::error::{Error, Result};
use crate::estimators::{delta_j, reduced_misfit, Estimator};
use crate::fom::{FullOrderModel, SensitivityTrajectory, StateTrajectory};
use crate::problem::{Parameter, N_PARAMS};
use crate::rom::{solve_rom, solve_rom_sensitivities, NestedRom, RomOperators};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub alpha_j: f64,
    pub lambda: f64,
    pub mu_ref: Parameter,
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_j > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cost weights must be positive, got alpha = {}, lambda = {}",
                self.alpha_j, self.lambda
            )));
        }
        Ok(())
    }

    fn penalty(&self, mu: &Parameter) -> f64 {
        0.5 * self.lambda * self.mu_ref.distance(mu).powi(2)
    }

    fn penalty_grad(&self, mu: &Parameter) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| self.lambda * (mu[i] - self.mu_ref[i]))
    }
}

/// `sum_k alpha_k |q^k - w^k|_{Mq}^2` for full-order coefficients.
pub fn fom_misfit(q: &DMatrix<f64>, data: &MeasurementData, model: &FullOrderModel) -> f64 {
    let d = q - &data.w;
    let md = model.ops.mq.mul_dense(&d);
    model.grid.weights().iter().enumerate().map(|(k, a)| a * d.column(k).dot(&md.column(k))).sum()
}

pub fn cost_from_states(mu: &Parameter, q: &DMatrix<f64>, data: &MeasurementData, cfg: &CostConfig, model: &FullOrderModel) -> f64 {
    0.5 * cfg.alpha_j * fom_misfit(q, data, model) + cfg.penalty(mu)
}

/// Full-order cost. One state solve.
pub fn cost_fom(mu: &Parameter, data: &MeasurementData, cfg: &CostConfig, model: &FullOrderModel) -> Result<f64> {
    data.validate(model)?;
    let traj = model.solve(mu).map_err(|e| e.at(*mu))?;
    Ok(cost_from_states(mu, &traj.q, data, cfg, model))
}

/// Full-order cost and gradient together with the trajectories they came from.
#[derive(Debug, Clone)]
pub struct FomCostGrad {
    pub value: f64,
    pub grad: [f64; N_PARAMS],
    pub state: StateTrajectory,
    pub sens: SensitivityTrajectory,
}

/// Cost and sensitivity-based gradient. One state solve plus four linearized solves.
pub fn grad_cost_fom(mu: &Parameter, data: &MeasurementData, cfg: &CostConfig, model: &FullOrderModel) -> Result<FomCostGrad> {
    data.validate(model)?;
    let state = model.solve(mu).map_err(|e| e.at(*mu))?;
    let sens = model.sensitivities(mu, &state).map_err(|e| e.at(*mu))?;
    let d = &state.q - &data.w;
    let md = model.ops.mq.mul_dense(&d);
    let weights = model.grid.weights();
    let mut misfit = 0.0;
    let mut grad = cfg.penalty_grad(mu);
    for (k, a) in weights.iter().enumerate() {
        misfit += a * d.column(k).dot(&md.column(k));
        for (i, g) in grad.iter_mut().enumerate() {
            *g += cfg.alpha_j * a * md.column(k).dot(&sens.sq[i].column(k));
        }
    }
    let value = 0.5 * cfg.alpha_j * misfit + cfg.penalty(mu);
    Ok(FomCostGrad { value, grad, state, sens })
}

/// Reduced cost `J^l` and reduced misfit `J~^l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomCost {
    pub value: f64,
    pub j_tilde: f64,
}

fn cost_from_reduced(mu: &Parameter, ops: &RomOperators, qhat: &DMatrix<f64>, cfg: &CostConfig) -> RomCost {
    let j_tilde = reduced_misfit(ops, qhat, &ops.grid.weights());
    RomCost { value: 0.5 * cfg.alpha_j * j_tilde + cfg.penalty(mu), j_tilde }
}

/// Reduced cost from the misfit expansion; needs cost vectors attached to `ops`.
pub fn cost_rom(mu: &Parameter, ops: &RomOperators, cfg: &CostConfig) -> Result<RomCost> {
    let traj = solve_rom(mu, ops)?;
    Ok(cost_from_reduced(mu, ops, &traj.qhat, cfg))
}

/// Reduced cost and gradient from reduced sensitivities.
pub fn grad_cost_rom(mu: &Parameter, ops: &RomOperators, cfg: &CostConfig) -> Result<(RomCost, [f64; N_PARAMS])> {
    let traj = solve_rom(mu, ops)?;
    let sens = solve_rom_sensitivities(mu, ops, &traj)?;
    let cost = ops.cost.as_ref().ok_or_else(|| Error::InvalidInput("no data attached to the reduced model".into()))?;
    let mut grad = cfg.penalty_grad(mu);
    for (k, a) in ops.grid.weights().iter().enumerate() {
        // Mq^l qhat - r1, the reduced counterpart of Mq (q - w)
        let r = &ops.mq * traj.qhat.column(k) - cost.r1.column(k);
        for (i, g) in grad.iter_mut().enumerate() {
            *g += cfg.alpha_j * a * r.dot(&sens.sq[i].column(k));
        }
    }
    Ok((cost_from_reduced(mu, ops, &traj.qhat, cfg), grad))
}

/// Full-order cost as an optimization objective, counting state solves.
pub struct FomObjective<'a> {
    pub model: &'a FullOrderModel,
    pub data: &'a MeasurementData,
    pub cfg: CostConfig,
    pub evaluations: usize,
}

impl<'a> FomObjective<'a> {
    pub fn new(model: &'a FullOrderModel, data: &'a MeasurementData, cfg: CostConfig) -> Self {
        Self { model, data, cfg, evaluations: 0 }
    }
}

impl Objective for FomObjective<'_> {
    fn evaluate(&mut self, mu: &Parameter) -> Result<Evaluation> {
        self.evaluations += 1;
        let r = grad_cost_fom(mu, self.data, &self.cfg, self.model)?;
        Ok(Evaluation { value: r.value, grad: r.grad, tr_ratio: 0.0, delta_j: 0.0 })
    }
}

/// Reduced cost with its certified error bound `Delta_J` and ratio `Delta_J / J^l`.
pub struct RomObjective<'a> {
    pub rom: &'a NestedRom,
    pub estimator: &'a Estimator,
    pub cfg: CostConfig,
    pub length: f64,
    pub evaluations: usize,
}

impl<'a> RomObjective<'a> {
    pub fn new(rom: &'a NestedRom, estimator: &'a Estimator, cfg: CostConfig, length: f64) -> Self {
        Self { rom, estimator, cfg, length, evaluations: 0 }
    }
}

/// `Delta_J / J^l`, infinite when the cost vanishes but the bound does not.
pub fn tr_ratio(delta_j: f64, value: f64) -> f64 {
    if delta_j == 0.0 {
        0.0
    } else if value > 0.0 {
        delta_j / value
    } else {
        f64::INFINITY
    }
}

impl Objective for RomObjective<'_> {
    /// Cost, bound and ratio; the gradient is left as NaN.
    fn value(&mut self, mu: &Parameter) -> Result<Evaluation> {
        self.evaluations += 1;
        let est = self.estimator.estimate(self.rom, mu)?;
        let c = cost_from_reduced(mu, &self.rom.small, &est.small.qhat, &self.cfg);
        let dj = delta_j(est.delta_q, c.j_tilde, self.cfg.alpha_j, self.length);
        Ok(Evaluation { value: c.value, grad: [f64::NAN; N_PARAMS], tr_ratio: tr_ratio(dj, c.value), delta_j: dj })
    }

    fn evaluate(&mut self, mu: &Parameter) -> Result<Evaluation> {
        let mut e = self.value(mu)?;
        let (_, grad) = grad_cost_rom(mu, &self.rom.small, &self.cfg)?;
        e.grad = grad;
        Ok(e)
    }
}
