//! True reduced-basis errors, hierarchical estimators, saturation
//! calibration and the bound on the cost-functional error.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::problem::Parameter;
use crate::rom::{lift, NestedRom, RomOperators, RomTrajectory};

/// `sqrt(sum_k alpha_k |a_k - b_k|_S^2)` over the columns of `a - b`.
pub fn trajectory_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, gram: &BandMatrix, weights: &[f64]) -> f64 {
    let d = a - b;
    let sd = gram.mul_dense(&d);
    let mut s = 0.0;
    for (k, w) in weights.iter().enumerate() {
        s += w * d.column(k).dot(&sd.column(k));
    }
    s.max(0.0).sqrt()
}

/// `(E_y, E_q)` between a full-order trajectory and a lifted reduced one.
pub fn true_error(
    fom: (&DMatrix<f64>, &DMatrix<f64>),
    rom: (&DMatrix<f64>, &DMatrix<f64>),
    weights: &[f64],
    sy: &BandMatrix,
    sq: &BandMatrix,
) -> (f64, f64) {
    (trajectory_distance(fom.0, rom.0, sy, weights), trajectory_distance(fom.1, rom.1, sq, weights))
}

/// Gram matrices `S^{m,m}` of the enlarged bases. The reduced basis is the
/// leading block, so `S^{m,l}` and `S^{l,l}` are its first columns.
#[derive(Debug, Clone)]
pub struct GramBlocks {
    pub mm_y: DMatrix<f64>,
    pub mm_q: DMatrix<f64>,
}

impl GramBlocks {
    pub fn from_operators(big: &RomOperators) -> Self {
        Self { mm_y: big.gram_y.clone(), mm_q: big.gram_q.clone() }
    }
}

/// The difference is formed in enlarged coordinates (`xm - [xl; 0]`) before
/// applying the Gram matrix; expanding the quadratic form cancels badly once
/// the two solutions agree to about `1e-8`.
fn delta_field(xl: &DMatrix<f64>, xm: &DMatrix<f64>, mm: &DMatrix<f64>, weights: &[f64]) -> f64 {
    let l = xl.nrows();
    let mut s = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let mut d = xm.column(k).into_owned();
        for i in 0..l {
            d[i] -= xl[(i, k)];
        }
        s += w * d.dot(&(mm * &d));
    }
    s.max(0.0).sqrt()
}

/// `(Delta^{l,m}_y, Delta^{l,m}_q)` from reduced coefficients only.
pub fn delta_lm(small: &RomTrajectory, big: &RomTrajectory, blocks: &GramBlocks, weights: &[f64]) -> (f64, f64) {
    (
        delta_field(&small.yhat, &big.yhat, &blocks.mm_y, weights),
        delta_field(&small.qhat, &big.qhat, &blocks.mm_q, weights),
    )
}

/// `Delta^l = Delta^{l,m} / sqrt(1 - sigma)`.
pub fn delta_l(delta_lm: f64, sigma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::InvalidSaturation(sigma));
    }
    Ok(delta_lm / (1.0 - sigma).sqrt())
}

/// Upper bound `sqrt((1 + sigma) / (1 - sigma))` of the effectivity.
pub fn eta_bar(sigma: f64) -> f64 {
    ((1.0 + sigma) / (1.0 - sigma)).sqrt()
}

/// `Delta^l / E^l`; one when both vanish, infinite when only the error vanishes.
pub fn efficiency(delta: f64, err: f64) -> f64 {
    if err > 0.0 {
        delta / err
    } else if delta == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Bound on `|J^h - J^l|` from the `q`-estimator and the reduced misfit `J~^l`.
pub fn delta_j(delta_q: f64, j_tilde: f64, alpha_j: f64, length: f64) -> f64 {
    let l2 = length * length;
    alpha_j * l2 * l2 / (2.0 * PI.powi(4)) * delta_q * delta_q + alpha_j * l2 / (PI * PI) * delta_q * j_tilde.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCalibration {
    pub sigma_y: f64,
    pub sigma_q: f64,
    pub eta_bar_y: f64,
    pub eta_bar_q: f64,
    pub training_size: usize,
}

impl EstimatorCalibration {
    pub fn new(sigma_y: f64, sigma_q: f64, training_size: usize) -> Self {
        Self { sigma_y, sigma_q, eta_bar_y: eta_bar(sigma_y), eta_bar_q: eta_bar(sigma_q), training_size }
    }

    pub fn is_saturated(&self) -> bool {
        self.sigma_y < 1.0 && self.sigma_q < 1.0
    }
}

/// True errors of both nested models at one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedErrors {
    pub mu: Parameter,
    pub e_l_y: f64,
    pub e_l_q: f64,
    pub e_m_y: f64,
    pub e_m_q: f64,
}

impl NestedErrors {
    pub fn ratio_y(&self) -> f64 {
        ratio(self.e_m_y, self.e_l_y)
    }

    pub fn ratio_q(&self) -> f64 {
        ratio(self.e_m_q, self.e_l_q)
    }
}

/// `E^m^2 / E^l^2`, zero when the reduced error vanishes.
pub fn ratio(e_m: f64, e_l: f64) -> f64 {
    if e_l > 0.0 {
        (e_m * e_m) / (e_l * e_l)
    } else {
        0.0
    }
}

/// Full-order reference for one parameter, `(y, q)` with one column per time node.
pub type Reference = (DMatrix<f64>, DMatrix<f64>);

/// Errors of both nested models at `mu` against a full-order reference.
pub fn nested_errors(
    mu: &Parameter,
    rom: &NestedRom,
    reference: &Reference,
    weights: &[f64],
    sy: &BandMatrix,
    sq: &BandMatrix,
) -> Result<NestedErrors> {
    let small = rom.solve_small(mu).map_err(|e| e.at(*mu))?;
    let big = rom.solve_big(mu).map_err(|e| e.at(*mu))?;
    let (ly, lq) = lift(&rom.basis.reduced(), &small);
    let (my, mq) = lift(&rom.basis.enlarged(), &big);
    let (e_l_y, e_l_q) = true_error((&reference.0, &reference.1), (&ly, &lq), weights, sy, sq);
    let (e_m_y, e_m_q) = true_error((&reference.0, &reference.1), (&my, &mq), weights, sy, sq);
    Ok(NestedErrors { mu: *mu, e_l_y, e_l_q, e_m_y, e_m_q })
}

/// Saturation constants as maxima of the error ratios over a training set.
/// `reference` yields the full-order trajectory for a training parameter.
pub fn estimate_sigmas<F>(
    training: &[Parameter],
    reference: F,
    rom: &NestedRom,
    weights: &[f64],
    sy: &BandMatrix,
    sq: &BandMatrix,
) -> Result<(EstimatorCalibration, Vec<NestedErrors>)>
where
    F: Fn(&Parameter) -> Result<Reference> + Sync,
{
    if training.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let errors: Vec<NestedErrors> = training
        .par_iter()
        .map(|mu| {
            let r = reference(mu).map_err(|e| e.at(*mu))?;
            nested_errors(mu, rom, &r, weights, sy, sq)
        })
        .collect::<Result<_>>()?;
    let sigma_y = errors.iter().map(|e| e.ratio_y()).fold(0.0, f64::max);
    let sigma_q = errors.iter().map(|e| e.ratio_q()).fold(0.0, f64::max);
    let cal = EstimatorCalibration::new(sigma_y, sigma_q, training.len());
    if !cal.is_saturated() {
        log::warn!("saturation violated on the training set: sigma_y = {sigma_y}, sigma_q = {sigma_q}");
    }
    Ok((cal, errors))
}

/// Estimator values at one parameter, with true errors when a reference is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mu: Parameter,
    pub e_y: Option<f64>,
    pub e_q: Option<f64>,
    pub delta_lm_y: f64,
    pub delta_lm_q: f64,
    pub delta_y: f64,
    pub delta_q: f64,
    pub eta_y: Option<f64>,
    pub eta_q: Option<f64>,
    pub delta_j: Option<f64>,
}

/// Estimator evaluation for a nested model. Only reduced quantities are touched.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub blocks: GramBlocks,
    pub calibration: EstimatorCalibration,
    pub weights: Vec<f64>,
}

/// Reduced solutions and estimator values at one parameter.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub small: RomTrajectory,
    pub big: RomTrajectory,
    pub delta_lm_y: f64,
    pub delta_lm_q: f64,
    pub delta_y: f64,
    pub delta_q: f64,
}

impl Estimate {
    /// Greedy indicator `(Delta_y + Delta_q) / 2`.
    pub fn indicator(&self) -> f64 {
        0.5 * (self.delta_y + self.delta_q)
    }
}

impl Estimator {
    pub fn new(rom: &NestedRom, calibration: EstimatorCalibration) -> Self {
        Self {
            blocks: GramBlocks::from_operators(&rom.big),
            calibration,
            weights: rom.big.grid.weights(),
        }
    }

    pub fn estimate(&self, rom: &NestedRom, mu: &Parameter) -> Result<Estimate> {
        let small = rom.solve_small(mu)?;
        let big = rom.solve_big(mu)?;
        let (dy, dq) = delta_lm(&small, &big, &self.blocks, &self.weights);
        Ok(Estimate {
            delta_y: delta_l(dy, self.calibration.sigma_y)?,
            delta_q: delta_l(dq, self.calibration.sigma_q)?,
            delta_lm_y: dy,
            delta_lm_q: dq,
            small,
            big,
        })
    }
}

/// Reduced misfit `sum_k alpha_k |q^{k,l} - w^k|_{Mq}^2` via the precomputed
/// expansion coefficients.
pub fn reduced_misfit(ops: &RomOperators, qhat: &DMatrix<f64>, weights: &[f64]) -> f64 {
    let cost = ops.cost.as_ref().expect("cost vectors attached");
    let mut s = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let q = qhat.column(k);
        let v = q.dot(&(&ops.mq * q)) - 2.0 * q.dot(&cost.r1.column(k)) + cost.r2[k];
        s += w * v;
    }
    s.max(0.0)
}

/// Norm of a single vector in a Gram matrix; convenience for reports.
pub fn gram_norm(gram: &BandMatrix, v: &DVector<f64>) -> f64 {
    gram.quad_form(v, v).max(0.0).sqrt()
}
