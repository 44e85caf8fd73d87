//! Trust-region reduced-basis optimization with an error-aware sufficient
//! decrease test.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bfgs::{projected_bfgs, projected_gradient_norm, BfgsOptions, Evaluation, Objective};
use super::cost::{grad_cost_fom, CostConfig, FomCostGrad, RomObjective};
use super::data::MeasurementData;
use super::{OptimResult, TracePoint};
use crate::error::{Error, Result};
use crate::estimators::{nested_errors, Estimator, EstimatorCalibration};
use crate::fom::{FullOrderModel, SensitivityTrajectory, StateTrajectory};
use crate::greedy::{enlarge, primary_candidates, CandidatePool};
use crate::problem::{Parameter, ParameterBox, N_PARAMS};
use crate::rom::operators::hcat;
use crate::rom::pod::{compress, GramFactor, PodRule};
use crate::rom::{deim_build, NestedRom, ReducedBasis};

/// A saturation round that lowers `E^m` by less than this factor made no progress.
const STALL: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrConfig {
    /// Outer tolerance on `|mu - P(mu - grad J^h(mu))|`.
    pub eps_tr: f64,
    pub initial_radius: f64,
    pub shrink: f64,
    pub enlarge: f64,
    /// Enlarge the radius when the accepted candidate has `q <= enlarge_below * radius`.
    pub enlarge_below: f64,
    pub max_iterations: usize,
    pub agc_kappa: f64,
    pub agc_max_halvings: usize,
    pub armijo: f64,
    /// Options of the inner projected BFGS; `radius` is set per iteration.
    pub inner: BfgsOptions,
    /// Skip enrichment at accepted candidates with `q < skip_enrichment_below * radius`.
    pub skip_enrichment_below: f64,
    pub pod_tol: f64,
    pub max_new_modes: usize,
    /// Put parameter sensitivities into the reduced space, not only into the enlarged one.
    pub sensitivity_snapshots: bool,
    pub initial_extra: usize,
    pub saturation_increment: usize,
    pub max_saturation_rounds: usize,
    pub deim_tol: f64,
    pub deim_factor: usize,
}

impl Default for TrConfig {
    fn default() -> Self {
        Self {
            eps_tr: 1e-5,
            initial_radius: 0.1,
            shrink: 0.5,
            enlarge: 2.0,
            enlarge_below: 0.25,
            max_iterations: 30,
            agc_kappa: 0.5,
            agc_max_halvings: 30,
            armijo: 1e-4,
            inner: BfgsOptions { tol: 1e-7, max_iterations: 100, ..BfgsOptions::default() },
            skip_enrichment_below: 0.0,
            pod_tol: 1e-10,
            max_new_modes: 10,
            sensitivity_snapshots: true,
            initial_extra: 2,
            saturation_increment: 1,
            max_saturation_rounds: 10,
            deim_tol: 1e-18,
            deim_factor: 3,
        }
    }
}

impl TrConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_tr > 0.0
            && self.initial_radius > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.enlarge >= 1.0
            && self.agc_kappa > 0.0
            && self.agc_kappa < 1.0
            && self.max_new_modes > 0
            && self.initial_extra > 0;
        if !ok {
            return Err(Error::InvalidInput(format!("invalid trust-region configuration {self:?}")));
        }
        Ok(())
    }
}

/// One pass of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrIteration {
    pub iteration: usize,
    pub mu: Parameter,
    pub candidate: Parameter,
    /// `J^{l,(i)}(mu_AGC)`, the right-hand side of the acceptance test.
    pub agc_value: f64,
    /// `J^l` of the candidate under the model that decided acceptance.
    pub candidate_value: f64,
    pub delta_j: f64,
    pub radius: f64,
    pub accepted: bool,
    pub enriched: bool,
    pub fom_evaluations: usize,
    pub l_y: usize,
    pub l_q: usize,
    pub m_y: usize,
    pub m_q: usize,
    pub l_f: usize,
    pub sigma_q: f64,
    /// `J^h` at the candidate when it was solved.
    pub fom_value: Option<f64>,
    /// Post-hoc check `|J^h - J^l| <= Delta_J` with the model that proposed the candidate.
    pub certified: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustRegionState {
    pub mu: Parameter,
    pub radius: f64,
    pub sigma_q: f64,
    pub history: Vec<TrIteration>,
}

/// Stored reduced model a trust-region run starts from, typically a greedy result.
#[derive(Debug, Clone)]
pub struct TrSeed {
    pub basis: ReducedBasis,
    pub extra_y: DMatrix<f64>,
    pub extra_q: DMatrix<f64>,
    /// Orthonormal collateral basis of the nonlinearity.
    pub collateral: DMatrix<f64>,
    pub calibration: EstimatorCalibration,
}

impl TrSeed {
    pub fn from_rom(rom: &NestedRom, calibration: EstimatorCalibration) -> Self {
        Self {
            basis: rom.basis.reduced(),
            extra_y: rom.basis.extra_y(),
            extra_q: rom.basis.extra_q(),
            collateral: rom.deim.psi_f.clone(),
            calibration,
        }
    }
}

/// Largest column norm, optionally in a Gram matrix.
fn max_column_norm(m: &DMatrix<f64>, gram: Option<&crate::linalg::BandMatrix>) -> f64 {
    m.column_iter()
        .map(|c| {
            let c = c.into_owned();
            match gram {
                Some(g) => g.quad_form(&c, &c).max(0.0).sqrt(),
                None => c.norm(),
            }
        })
        .fold(0.0, f64::max)
}

/// Local nested reduced model grown from full-order solves at visited parameters.
#[derive(Debug, Clone)]
pub struct LocalRb {
    gy: GramFactor,
    gq: GramFactor,
    small: ReducedBasis,
    pool: CandidatePool,
    /// Compressed nonlinearity snapshots of all visited parameters.
    f_snap: DMatrix<f64>,
    extra: (usize, usize),
    pub rom: NestedRom,
    pub calibration: EstimatorCalibration,
    pub visited: Vec<Parameter>,
}

fn snapshots(state: &StateTrajectory, sens: &SensitivityTrajectory, with_sens: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let (mut y, mut q) = (state.y.clone(), state.q.clone());
    if with_sens {
        for i in 0..N_PARAMS {
            y = hcat(&y, &sens.sy[i]);
            q = hcat(&q, &sens.sq[i]);
        }
    }
    (y, q)
}

impl LocalRb {
    /// Model from the solves at one parameter, optionally on top of a stored
    /// model. A seed contributes its reduced basis, its enlargement directions
    /// and its collateral basis (scaled to the largest snapshot so that they
    /// survive compression), and its calibration serves as the fallback when
    /// the first local calibration is floor-limited.
    pub fn new(
        model: &FullOrderModel,
        data: &MeasurementData,
        cfg: &TrConfig,
        seed: Option<&TrSeed>,
        mu: &Parameter,
        state: &StateTrajectory,
        sens: &SensitivityTrajectory,
    ) -> Result<Self> {
        let gy = GramFactor::new(&model.ops.sy)?;
        let gq = GramFactor::new(&model.ops.sq)?;
        let n = model.dim_v0();
        let small = seed.map(|s| s.basis.clone()).unwrap_or_else(|| ReducedBasis {
            psi_y: DMatrix::zeros(model.dim_v(), 0),
            psi_q: DMatrix::zeros(n, 0),
        });
        let mut pool = CandidatePool::empty(model);
        let mut f_snap = DMatrix::zeros(n, 0);
        let mut calibration = EstimatorCalibration::new(0.0, 0.0, 0);
        if let Some(s) = seed {
            pool.y = &s.extra_y * max_column_norm(&state.y, Some(&model.ops.sy));
            pool.q = &s.extra_q * max_column_norm(&state.q, Some(&model.ops.sq));
            f_snap = &s.collateral * max_column_norm(&state.nonlinearity(), None);
            calibration = s.calibration;
        }
        let placeholder = NestedRom::build(
            model,
            crate::rom::EnlargedBasis::new(&small, &DMatrix::zeros(model.dim_v(), 0), &DMatrix::zeros(n, 0)),
            crate::rom::DeimInterpolant::empty(n),
        );
        let mut rb = Self {
            gy,
            gq,
            small,
            pool,
            f_snap,
            extra: (cfg.initial_extra, cfg.initial_extra),
            rom: placeholder,
            calibration,
            visited: Vec::new(),
        };
        rb.enrich(model, data, cfg, mu, state, sens)?;
        Ok(rb)
    }

    /// Adds the solves at `mu` to the reduced space, the candidate pool and
    /// the collateral basis, then rebuilds and recalibrates at `mu`.
    pub fn enrich(
        &mut self,
        model: &FullOrderModel,
        data: &MeasurementData,
        cfg: &TrConfig,
        mu: &Parameter,
        state: &StateTrajectory,
        sens: &SensitivityTrajectory,
    ) -> Result<()> {
        let ops = &model.ops;
        let (sy, sq) = snapshots(state, sens, cfg.sensitivity_snapshots);
        let (sy, sq) = (compress(&sy, Some(&self.gy)), compress(&sq, Some(&self.gq)));
        let new_y = primary_candidates(&sy, &self.small.psi_y, &ops.sy, &self.gy, cfg.pod_tol, cfg.max_new_modes);
        let new_q = primary_candidates(&sq, &self.small.psi_q, &ops.sq, &self.gq, cfg.pod_tol, cfg.max_new_modes);
        self.small.psi_y = hcat(&self.small.psi_y, &new_y);
        self.small.psi_q = hcat(&self.small.psi_q, &new_q);
        self.pool.add(state, sens, &self.gy, &self.gq);
        self.f_snap = compress(&hcat(&self.f_snap, &state.nonlinearity()), None);
        self.visited.push(*mu);
        log::debug!("local basis at {mu}: +({}, {}) modes", new_y.ncols(), new_q.ncols());
        self.rebuild(model, data, cfg)?;
        self.calibrate(model, data, cfg, mu, state)
    }

    fn rebuild(&mut self, model: &FullOrderModel, data: &MeasurementData, cfg: &TrConfig) -> Result<()> {
        let basis = enlarge(model, &self.small, &self.pool, (&self.gy, &self.gq), self.extra);
        let cap = cfg.deim_factor * (self.small.l_y() + self.small.l_q());
        let deim = deim_build(&self.f_snap, PodRule::Energy { tol: cfg.deim_tol, max: cap.max(1) })?;
        let mut rom = NestedRom::build(model, basis, deim);
        rom.attach_data(model, &data.w);
        self.rom = rom;
        Ok(())
    }

    /// Saturation constants from the errors at `mu`, growing the enlarged
    /// spaces until both ratios are below one. When growing no longer lowers
    /// `E^m`, both errors sit at the common interpolation floor and the
    /// previous constant of that field is kept.
    pub fn calibrate(
        &mut self,
        model: &FullOrderModel,
        data: &MeasurementData,
        cfg: &TrConfig,
        mu: &Parameter,
        state: &StateTrajectory,
    ) -> Result<()> {
        let reference = (state.y.clone(), state.q.clone());
        let weights = model.grid.weights();
        let previous = (self.calibration.training_size > 0).then_some(self.calibration);
        let mut last_em: Option<(f64, f64)> = None;
        for round in 0..=cfg.max_saturation_rounds {
            let e = nested_errors(mu, &self.rom, &reference, &weights, &model.ops.sy, &model.ops.sq)?;
            let (ry, rq) = (e.ratio_y(), e.ratio_q());
            log::debug!(
                "calibration at {mu}: l = ({}, {}), m = ({}, {}), l_f = {}, E^l = ({:.3e}, {:.3e}), E^m = ({:.3e}, {:.3e})",
                self.rom.l_y(),
                self.rom.l_q(),
                self.rom.m_y(),
                self.rom.m_q(),
                self.rom.deim.len(),
                e.e_l_y,
                e.e_l_q,
                e.e_m_y,
                e.e_m_q
            );
            if ry < 1.0 && rq < 1.0 {
                self.calibration = EstimatorCalibration::new(ry, rq, 1);
                return Ok(());
            }
            let stalled = last_em.is_some_and(|(ey, eq)| {
                (ry >= 1.0 && e.e_m_y > STALL * ey) || (rq >= 1.0 && e.e_m_q > STALL * eq)
            });
            if stalled || round == cfg.max_saturation_rounds {
                let Some(p) = previous else {
                    return Err(Error::SaturationExhausted { iterations: round, sigma_y: ry, sigma_q: rq });
                };
                let sy = if ry < 1.0 { ry } else { p.sigma_y };
                let sq = if rq < 1.0 { rq } else { p.sigma_q };
                log::info!("saturation ratios ({ry:.4}, {rq:.4}) at {mu} are floor-limited; using ({sy:.4}, {sq:.4})");
                self.calibration = EstimatorCalibration::new(sy, sq, 1);
                return Ok(());
            }
            last_em = Some((e.e_m_y, e.e_m_q));
            if ry >= 1.0 {
                self.extra.0 += cfg.saturation_increment;
            }
            if rq >= 1.0 {
                self.extra.1 += cfg.saturation_increment;
            }
            self.rebuild(model, data, cfg)?;
        }
        unreachable!()
    }

    pub fn estimator(&self) -> Estimator {
        Estimator::new(&self.rom, self.calibration)
    }
}

/// Outcome of the generalized Cauchy step.
#[derive(Debug, Clone, Copy)]
pub struct AgcPoint {
    pub mu: Parameter,
    pub eval: Evaluation,
    /// No admissible step was found.
    pub stagnated: bool,
}

/// Projected backtracking along `-grad` from `mu`: the largest step
/// `kappa^j` whose projection decreases the cost sufficiently and keeps
/// `tr_ratio <= radius`.
pub fn agc_point<O: Objective>(
    obj: &mut O,
    bounds: &ParameterBox,
    mu: &Parameter,
    at_mu: &Evaluation,
    radius: f64,
    cfg: &TrConfig,
) -> Result<AgcPoint> {
    let mut beta = 1.0;
    for _ in 0..=cfg.agc_max_halvings {
        let trial = bounds.project(&mu.axpy(-beta, &at_mu.grad));
        let step = mu.distance(&trial);
        if step == 0.0 {
            // zero projected gradient: nothing to do
            return Ok(AgcPoint { mu: *mu, eval: *at_mu, stagnated: false });
        }
        if let Ok(e) = obj.value(&trial) {
            if e.tr_ratio <= radius && e.value <= at_mu.value - cfg.armijo / beta * step * step {
                let eval = obj.evaluate(&trial)?;
                return Ok(AgcPoint { mu: trial, eval, stagnated: false });
            }
        }
        beta *= cfg.agc_kappa;
    }
    Ok(AgcPoint { mu: *mu, eval: *at_mu, stagnated: true })
}

/// Projected BFGS on the reduced cost from the AGC point, truncated at the
/// trust-region boundary. Falls back to the AGC point on failure.
pub fn solve_tr_subproblem<O: Objective>(
    obj: &mut O,
    bounds: &ParameterBox,
    agc: &AgcPoint,
    radius: f64,
    cfg: &TrConfig,
) -> (Parameter, Evaluation) {
    let opts = BfgsOptions { radius: Some(radius), ..cfg.inner };
    match projected_bfgs(obj, bounds, &agc.mu, Some(agc.eval), &opts) {
        Ok(out) if out.eval.value <= agc.eval.value && out.eval.tr_ratio <= radius => {
            log::debug!("subproblem: {:?} after {} iterations", out.reason, out.iterations);
            (out.mu, out.eval)
        }
        Ok(_) => (agc.mu, agc.eval),
        Err(e) => {
            log::warn!("subproblem failed: {e}; using the AGC point");
            (agc.mu, agc.eval)
        }
    }
}

/// Result of [`run_tr_rb`]: summary, full trust-region history and the final local model.
#[derive(Debug, Clone)]
pub struct TrOutcome {
    pub result: OptimResult,
    pub state: TrustRegionState,
    pub local: Option<LocalRb>,
}

/// Trust-region reduced-basis minimization of the full-order cost from `start`.
pub fn run_tr_rb(
    model: &FullOrderModel,
    data: &MeasurementData,
    cost: &CostConfig,
    cfg: &TrConfig,
    start: &Parameter,
    seed: Option<&TrSeed>,
) -> Result<TrOutcome> {
    cost.validate()?;
    cfg.validate()?;
    data.validate(model)?;
    let clock = Instant::now();
    let bounds = &model.problem.bounds;
    let length = model.problem.length;

    let mut mu = bounds.project(start);
    let mut fom = grad_cost_fom(&mu, data, cost, model)?;
    let mut fom_evaluations = 1;
    let mut stationarity = projected_gradient_norm(bounds, &mu, &fom.grad);
    let mut trace = vec![TracePoint { iteration: 0, mu, cost: fom.value, fom_evaluations }];
    let mut state = TrustRegionState { mu, radius: cfg.initial_radius, sigma_q: 0.0, history: Vec::new() };

    let finish = |mu: Parameter, fom: &FomCostGrad, iterations, evals, converged, stationarity, trace, state, local| {
        let result = OptimResult {
            mu_opt: mu,
            cost: fom.value,
            iterations,
            fom_evaluations: evals,
            elapsed: clock.elapsed(),
            e_abs: None,
            e_rel: None,
            converged,
            stationarity,
            trace,
        };
        TrOutcome { result: result.with_truth(data.true_parameter().as_ref()), state, local }
    };

    if stationarity <= cfg.eps_tr {
        return Ok(finish(mu, &fom, 0, fom_evaluations, true, stationarity, trace, state, None));
    }

    let mut rb = LocalRb::new(model, data, cfg, seed, &mu, &fom.state, &fom.sens)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let radius = state.radius;
        state.sigma_q = rb.calibration.sigma_q;
        let estimator = rb.estimator();
        let (agc, cand, cand_eval) = {
            let mut obj = RomObjective::new(&rb.rom, &estimator, *cost, length);
            let at_mu = obj.evaluate(&mu)?;
            let agc = agc_point(&mut obj, bounds, &mu, &at_mu, radius, cfg)?;
            let (cand, cand_eval) = solve_tr_subproblem(&mut obj, bounds, &agc, radius, cfg);
            (agc, cand, cand_eval)
        };
        let threshold = agc.eval.value;
        let mut record = TrIteration {
            iteration: iterations,
            mu,
            candidate: cand,
            agc_value: threshold,
            candidate_value: cand_eval.value,
            delta_j: cand_eval.delta_j,
            radius,
            accepted: false,
            enriched: false,
            fom_evaluations,
            l_y: rb.rom.l_y(),
            l_q: rb.rom.l_q(),
            m_y: rb.rom.m_y(),
            m_q: rb.rom.m_q(),
            l_f: rb.rom.deim.len(),
            sigma_q: rb.calibration.sigma_q,
            fom_value: None,
            certified: None,
        };

        let sufficient = cand_eval.value + cand_eval.delta_j <= threshold;
        let hopeless = cand_eval.value - cand_eval.delta_j > threshold;
        if hopeless || cand == mu {
            log::info!("TR {iterations}: candidate {cand} rejected by the bound, radius {radius:.3e}");
            state.radius *= cfg.shrink;
            state.history.push(record);
            continue;
        }

        let new_fom = grad_cost_fom(&cand, data, cost, model)?;
        fom_evaluations += 1;
        record.fom_value = Some(new_fom.value);
        record.certified = Some((new_fom.value - cand_eval.value).abs() <= cand_eval.delta_j);
        let skip = sufficient && cand_eval.tr_ratio < cfg.skip_enrichment_below * radius;
        let accepted = if skip {
            true
        } else {
            rb.enrich(model, data, cfg, &cand, &new_fom.state, &new_fom.sens)?;
            record.enriched = true;
            let estimator = rb.estimator();
            let mut obj = RomObjective::new(&rb.rom, &estimator, *cost, length);
            let v = obj.value(&cand)?;
            record.candidate_value = v.value;
            record.delta_j = v.delta_j;
            v.value <= threshold
        };
        record.accepted = accepted;
        record.fom_evaluations = fom_evaluations;
        state.history.push(record);

        if !accepted {
            log::info!("TR {iterations}: candidate {cand} rejected after enrichment, radius {radius:.3e}");
            state.radius *= cfg.shrink;
            // the saturation constant belongs to the current iterate
            rb.calibrate(model, data, cfg, &mu, &fom.state)?;
            continue;
        }
        mu = cand;
        fom = new_fom;
        stationarity = projected_gradient_norm(bounds, &mu, &fom.grad);
        trace.push(TracePoint { iteration: iterations, mu, cost: fom.value, fom_evaluations });
        log::info!(
            "TR {iterations}: accepted {mu}, J = {:.6e}, stationarity {stationarity:.3e}, radius {radius:.3e}",
            fom.value
        );
        if cand_eval.tr_ratio <= cfg.enlarge_below * radius {
            state.radius *= cfg.enlarge;
        }
        state.mu = mu;
        if stationarity <= cfg.eps_tr {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("trust-region loop stopped after {iterations} iterations, stationarity {stationarity:.3e}");
    }
    state.sigma_q = rb.calibration.sigma_q;
    Ok(finish(mu, &fom, iterations, fom_evaluations, converged, stationarity, trace, state, Some(rb)))
}
