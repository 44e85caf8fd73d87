//! Weak greedy construction of nested reduced spaces with sensitivity-based
//! enlarged spaces and saturation enforcement.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_sigmas, Estimator, EstimatorCalibration, NestedErrors, Reference};
use crate::fom::{FullOrderModel, SensitivityTrajectory, StateTrajectory};
use crate::linalg::Weighted;
use crate::problem::{Parameter, N_PARAMS};
use crate::rom::deim::{from_basis, DeimInterpolant};
use crate::rom::operators::hcat;
use crate::rom::pod::{compress, pod, GramFactor, PodRule, RANK_TOL};
use crate::rom::{EnlargedBasis, NestedRom, ReducedBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Target for the indicator `e^l`.
    pub tol: f64,
    /// Cap on `l_y + l_q`.
    pub max_basis: usize,
    pub training_set: Vec<Parameter>,
    pub initial_mu: Parameter,
    /// Relative energy tolerance of every POD.
    pub pod_tol: f64,
    /// Cap on modes added per field and enrichment.
    pub max_new_modes: usize,
    /// Initial `m - l` per field.
    pub initial_extra: usize,
    /// Modes added to an enlarged space per saturation round.
    pub saturation_increment: usize,
    pub max_saturation_rounds: usize,
    /// Relative energy tolerance of the collateral basis.
    pub deim_tol: f64,
    /// `l_f <= deim_factor * (l_y + l_q)`.
    pub deim_factor: usize,
    pub max_iterations: usize,
}

impl GreedyConfig {
    pub fn new(tol: f64, max_basis: usize, training_set: Vec<Parameter>, initial_mu: Parameter) -> Self {
        Self {
            tol,
            max_basis,
            training_set,
            initial_mu,
            pod_tol: 1e-10,
            max_new_modes: 5,
            initial_extra: 2,
            saturation_increment: 1,
            max_saturation_rounds: 20,
            deim_tol: 1e-14,
            deim_factor: 3,
            max_iterations: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("greedy tolerance must be positive, got {}", self.tol)));
        }
        if self.max_basis == 0 {
            return Err(Error::InvalidInput("basis cap must be positive".into()));
        }
        if self.training_set.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        if self.max_new_modes == 0 || self.initial_extra == 0 {
            return Err(Error::InvalidInput("enrichment sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyIteration {
    pub iteration: usize,
    pub mu_hat: Parameter,
    pub e_hat: f64,
    pub l_y: usize,
    pub l_q: usize,
    pub m_y: usize,
    pub m_q: usize,
    pub l_f: usize,
    pub sigma_y: f64,
    pub sigma_q: f64,
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub rom: NestedRom,
    pub calibration: EstimatorCalibration,
    pub history: Vec<GreedyIteration>,
    /// Stopped because `l_y + l_q` reached the cap rather than by tolerance.
    pub capped: bool,
    pub fom_solves: usize,
    pub elapsed: Duration,
}

impl GreedyResult {
    pub fn estimator(&self) -> Estimator {
        Estimator::new(&self.rom, self.calibration)
    }
}

fn key(mu: &Parameter) -> [u64; N_PARAMS] {
    mu.0.map(f64::to_bits)
}

/// Full-order solutions cached by parameter, plus the accumulated
/// correlation `sum F F^T` of all nonlinearity snapshots seen so far.
pub struct FomCache<'a> {
    model: &'a FullOrderModel,
    states: Mutex<HashMap<[u64; N_PARAMS], Arc<StateTrajectory>>>,
    sens: Mutex<HashMap<[u64; N_PARAMS], Arc<SensitivityTrajectory>>>,
    f_corr: Mutex<DMatrix<f64>>,
    solves: Mutex<usize>,
}

impl<'a> FomCache<'a> {
    pub fn new(model: &'a FullOrderModel) -> Self {
        let n = model.dim_v0();
        Self {
            model,
            states: Mutex::new(HashMap::new()),
            sens: Mutex::new(HashMap::new()),
            f_corr: Mutex::new(DMatrix::zeros(n, n)),
            solves: Mutex::new(0),
        }
    }

    pub fn model(&self) -> &FullOrderModel {
        self.model
    }

    pub fn solves(&self) -> usize {
        *self.solves.lock().expect("lock")
    }

    pub fn get(&self, mu: &Parameter) -> Option<Arc<StateTrajectory>> {
        self.states.lock().expect("lock").get(&key(mu)).cloned()
    }

    /// Solves all missing parameters (in parallel) and inserts them in input order.
    pub fn ensure(&self, mus: &[Parameter]) -> Result<()> {
        let mut missing: Vec<Parameter> = Vec::new();
        {
            let states = self.states.lock().expect("lock");
            for mu in mus {
                if !states.contains_key(&key(mu)) && !missing.iter().any(|m| key(m) == key(mu)) {
                    missing.push(*mu);
                }
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let solved: Vec<(StateTrajectory, DMatrix<f64>)> = missing
            .par_iter()
            .map(|mu| {
                let t = self.model.solve(mu).map_err(|e| e.at(*mu))?;
                let f = t.nonlinearity();
                let c = &f * f.transpose();
                Ok((t, c))
            })
            .collect::<Result<_>>()?;
        let mut states = self.states.lock().expect("lock");
        let mut corr = self.f_corr.lock().expect("lock");
        for (mu, (t, c)) in missing.iter().zip(solved) {
            *corr += c;
            states.insert(key(mu), Arc::new(t));
        }
        *self.solves.lock().expect("lock") += missing.len();
        Ok(())
    }

    pub fn state(&self, mu: &Parameter) -> Result<Arc<StateTrajectory>> {
        self.ensure(std::slice::from_ref(mu))?;
        Ok(self.get(mu).expect("just inserted"))
    }

    pub fn sensitivities(&self, mu: &Parameter) -> Result<Arc<SensitivityTrajectory>> {
        if let Some(s) = self.sens.lock().expect("lock").get(&key(mu)) {
            return Ok(s.clone());
        }
        let t = self.state(mu)?;
        let s = Arc::new(self.model.sensitivities(mu, &t).map_err(|e| e.at(*mu))?);
        self.sens.lock().expect("lock").insert(key(mu), s.clone());
        Ok(s)
    }

    pub fn reference(&self, mu: &Parameter) -> Result<Reference> {
        let t = self.state(mu)?;
        Ok((t.y.clone(), t.q.clone()))
    }

    pub fn f_correlation(&self) -> DMatrix<f64> {
        self.f_corr.lock().expect("lock").clone()
    }
}

/// Leading eigenvectors of a nonlinearity correlation matrix and their energies.
#[derive(Debug, Clone)]
pub struct CollateralModes {
    pub modes: DMatrix<f64>,
    pub energies: Vec<f64>,
}

impl CollateralModes {
    pub fn from_correlation(c: &DMatrix<f64>) -> Self {
        let eig = c.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let keep: Vec<usize> = order
            .into_iter()
            .filter(|&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * RANK_TOL * top)
            .collect();
        let mut modes = DMatrix::zeros(c.nrows(), keep.len());
        for (j, &i) in keep.iter().enumerate() {
            modes.set_column(j, &eig.eigenvectors.column(i));
        }
        let energies = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        Self { modes, energies }
    }

    /// Interpolant with the smallest count meeting the energy tolerance, at most `cap`.
    pub fn deim(&self, tol: f64, cap: usize) -> Result<DeimInterpolant> {
        let total: f64 = self.energies.iter().sum();
        let mut acc = 0.0;
        let mut l = 0;
        for e in &self.energies {
            if total > 0.0 && acc >= (1.0 - tol) * total {
                break;
            }
            acc += e;
            l += 1;
        }
        let l = l.min(cap).max(1).min(self.energies.len());
        from_basis(self.modes.columns(0, l).into_owned())
    }
}

/// States and sensitivities collected as candidates for the enlarged spaces.
#[derive(Debug, Clone)]
pub(crate) struct CandidatePool {
    pub y: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl CandidatePool {
    pub fn empty(model: &FullOrderModel) -> Self {
        Self { y: DMatrix::zeros(model.dim_v(), 0), q: DMatrix::zeros(model.dim_v0(), 0) }
    }

    pub fn add(&mut self, t: &StateTrajectory, s: &SensitivityTrajectory, gy: &GramFactor, gq: &GramFactor) {
        let mut y = hcat(&self.y, &t.y);
        let mut q = hcat(&self.q, &t.q);
        for i in 0..N_PARAMS {
            y = hcat(&y, &s.sy[i]);
            q = hcat(&q, &s.sq[i]);
        }
        self.y = compress(&y, Some(gy));
        self.q = compress(&q, Some(gq));
    }
}

/// Working state of the greedy loop.
struct Builder<'c, 'm> {
    cfg: &'c GreedyConfig,
    cache: &'c FomCache<'m>,
    gy: GramFactor,
    gq: GramFactor,
    small: ReducedBasis,
    extra_y: usize,
    extra_q: usize,
    pool: CandidatePool,
    collateral: CollateralModes,
}

impl Builder<'_, '_> {
    fn model(&self) -> &FullOrderModel {
        self.cache.model()
    }

    fn enlarged_for(&self, small: &ReducedBasis) -> EnlargedBasis {
        enlarge(self.model(), small, &self.pool, (&self.gy, &self.gq), (self.extra_y, self.extra_q))
    }

    fn rom_for(&self, small: &ReducedBasis) -> Result<NestedRom> {
        let basis = self.enlarged_for(small);
        let cap = self.cfg.deim_factor * (small.l_y() + small.l_q());
        let deim = self.collateral.deim(self.cfg.deim_tol, cap)?;
        Ok(NestedRom::build(self.model(), basis, deim))
    }

    fn refresh_collateral(&mut self) {
        self.collateral = CollateralModes::from_correlation(&self.cache.f_correlation());
    }

    fn add_to_pool(&mut self, mu: &Parameter) -> Result<()> {
        let t = self.cache.state(mu)?;
        let s = self.cache.sensitivities(mu)?;
        self.pool.add(&t, &s, &self.gy, &self.gq);
        Ok(())
    }

    fn calibrate(&self, rom: &NestedRom) -> Result<(EstimatorCalibration, Vec<NestedErrors>)> {
        let training = &self.cfg.training_set;
        self.cache.ensure(training)?;
        let model = self.model();
        estimate_sigmas(training, |mu| self.cache.reference(mu), rom, &model.grid.weights(), &model.ops.sy, &model.ops.sq)
    }

    /// Adds enlarged-space modes at the worst violators until both saturation constants are below one.
    fn enforce_saturation(&mut self, mut rom: NestedRom) -> Result<(NestedRom, EstimatorCalibration)> {
        let mut rounds = 0;
        loop {
            let (cal, errors) = self.calibrate(&rom)?;
            if cal.is_saturated() {
                return Ok((rom, cal));
            }
            rounds += 1;
            if rounds > self.cfg.max_saturation_rounds {
                return Err(Error::SaturationExhausted { iterations: rounds - 1, sigma_y: cal.sigma_y, sigma_q: cal.sigma_q });
            }
            if cal.sigma_y >= 1.0 {
                let worst = argmax_by(&errors, |e| e.ratio_y()).map(|e| e.mu).expect("nonempty");
                log::info!("saturation round {rounds}: sigma_y = {:.3e}, enriching at {worst}", cal.sigma_y);
                self.add_to_pool(&worst)?;
                self.extra_y += self.cfg.saturation_increment;
            }
            if cal.sigma_q >= 1.0 {
                let worst = argmax_by(&errors, |e| e.ratio_q()).map(|e| e.mu).expect("nonempty");
                log::info!("saturation round {rounds}: sigma_q = {:.3e}, enriching at {worst}", cal.sigma_q);
                self.add_to_pool(&worst)?;
                self.extra_q += self.cfg.saturation_increment;
            }
            rom = self.rom_for(&self.small)?;
        }
    }
}

/// Columns of the largest value of `f`; ties go to the lexicographically smallest parameter.
fn argmax_by<F: Fn(&NestedErrors) -> f64>(errors: &[NestedErrors], f: F) -> Option<&NestedErrors> {
    let mut best: Option<&NestedErrors> = None;
    for e in errors {
        best = match best {
            None => Some(e),
            Some(b) => {
                let (fe, fb) = (f(e), f(b));
                if fe > fb || (fe == fb && e.mu.lex_cmp(&b.mu).is_lt()) {
                    Some(e)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Enlarged space: `small` plus the leading pool modes orthogonal to it.
pub(crate) fn enlarge(
    model: &FullOrderModel,
    small: &ReducedBasis,
    pool: &CandidatePool,
    factors: (&GramFactor, &GramFactor),
    extra: (usize, usize),
) -> EnlargedBasis {
    let ops = &model.ops;
    let cand_y = Weighted(&ops.sy).project_out(&pool.y, &small.psi_y);
    let cand_q = Weighted(&ops.sq).project_out(&pool.q, &small.psi_q);
    let ey = extra_modes(&cand_y, factors.0, extra.0, &ops.sy, &small.psi_y);
    let eq = extra_modes(&cand_q, factors.1, extra.1, &ops.sq, &small.psi_q);
    EnlargedBasis::new(small, &ey, &eq)
}

/// `count` POD modes of the candidates, made Gram-orthogonal to `basis`.
fn extra_modes(
    candidates: &DMatrix<f64>,
    g: &GramFactor,
    count: usize,
    gram: &crate::linalg::BandMatrix,
    basis: &DMatrix<f64>,
) -> DMatrix<f64> {
    match pod(candidates, Some(g), PodRule::Rank(count)) {
        Ok(p) => {
            let modes = Weighted(gram).project_out(&p.modes, basis);
            // renormalize after the final orthogonalization pass
            let mut out = modes.clone();
            for (j, mut c) in out.column_iter_mut().enumerate() {
                let v = modes.column(j).into_owned();
                let nrm = gram.quad_form(&v, &v).sqrt();
                c /= nrm;
            }
            out
        }
        Err(_) => {
            log::warn!("no candidates left for the enlarged space");
            DMatrix::zeros(candidates.nrows(), 0)
        }
    }
}

/// Modes for a reduced space from one trajectory, after removing the existing span.
pub(crate) fn primary_candidates(
    snaps: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    gram: &crate::linalg::BandMatrix,
    g: &GramFactor,
    tol: f64,
    max: usize,
) -> DMatrix<f64> {
    let resid = Weighted(gram).project_out(snaps, basis);
    let total: f64 = snaps.iter().map(|v| v * v).sum();
    let left: f64 = resid.iter().map(|v| v * v).sum();
    if !(left > RANK_TOL * RANK_TOL * total) {
        return DMatrix::zeros(snaps.nrows(), 0);
    }
    match pod(&resid, Some(g), PodRule::Energy { tol, max }) {
        Ok(p) => {
            let m = Weighted(gram).project_out(&p.modes, basis);
            let mut out = m.clone();
            for (j, mut c) in out.column_iter_mut().enumerate() {
                let v = m.column(j).into_owned();
                c /= gram.quad_form(&v, &v).sqrt();
            }
            out
        }
        Err(_) => DMatrix::zeros(snaps.nrows(), 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Y,
    Q,
}

/// Runs the weak greedy algorithm on the configured training set.
pub fn run_weak_greedy(cfg: &GreedyConfig, model: &FullOrderModel) -> Result<GreedyResult> {
    cfg.validate()?;
    let start = Instant::now();
    let cache = FomCache::new(model);
    let ops = &model.ops;
    let gy = GramFactor::new(&ops.sy)?;
    let gq = GramFactor::new(&ops.sq)?;

    // initial spaces from the trajectory at the initial parameter
    let mu0 = cfg.initial_mu;
    let t0 = cache.state(&mu0)?;
    let rule = PodRule::Energy { tol: cfg.pod_tol, max: cfg.max_new_modes };
    let small = ReducedBasis {
        psi_y: pod(&t0.y, Some(&gy), rule).map_err(|e| e.at(mu0))?.modes,
        psi_q: pod(&t0.q, Some(&gq), rule).map_err(|e| e.at(mu0))?.modes,
    };
    let mut b = Builder {
        cfg,
        cache: &cache,
        gy,
        gq,
        small,
        extra_y: cfg.initial_extra,
        extra_q: cfg.initial_extra,
        pool: CandidatePool::empty(model),
        collateral: CollateralModes { modes: DMatrix::zeros(model.dim_v0(), 0), energies: vec![] },
    };
    b.add_to_pool(&mu0)?;
    cache.ensure(&cfg.training_set)?;
    b.refresh_collateral();
    let rom = b.rom_for(&b.small)?;
    let (mut rom, mut cal) = b.enforce_saturation(rom)?;

    let mut history = Vec::new();
    let mut capped = false;
    for iteration in 0..cfg.max_iterations {
        let est = Estimator::new(&rom, cal);
        let indicators: Vec<Option<f64>> = cfg
            .training_set
            .par_iter()
            .map(|mu| match est.estimate(&rom, mu) {
                Ok(e) => Some(e.indicator()),
                Err(err) => {
                    log::warn!("reduced solve failed at {mu}: {err}; skipped");
                    None
                }
            })
            .collect();
        let mut best: Option<(Parameter, f64)> = None;
        for (mu, e) in cfg.training_set.iter().zip(&indicators) {
            let Some(e) = *e else { continue };
            best = match best {
                None => Some((*mu, e)),
                Some((bm, be)) if e > be || (e == be && mu.lex_cmp(&bm).is_lt()) => Some((*mu, e)),
                keep => keep,
            };
        }
        let (mu_hat, e_hat) = best.ok_or_else(|| Error::InvalidInput("reduced model failed on every training parameter".into()))?;
        history.push(GreedyIteration {
            iteration,
            mu_hat,
            e_hat,
            l_y: rom.l_y(),
            l_q: rom.l_q(),
            m_y: rom.m_y(),
            m_q: rom.m_q(),
            l_f: rom.deim.len(),
            sigma_y: cal.sigma_y,
            sigma_q: cal.sigma_q,
        });
        log::info!(
            "greedy {iteration}: e = {e_hat:.3e} at {mu_hat}, l = ({}, {}), m = ({}, {}), l_f = {}, sigma = ({:.3}, {:.3})",
            rom.l_y(),
            rom.l_q(),
            rom.m_y(),
            rom.m_q(),
            rom.deim.len(),
            cal.sigma_y,
            cal.sigma_q
        );
        if e_hat <= cfg.tol {
            break;
        }
        if rom.l_y() + rom.l_q() >= cfg.max_basis {
            capped = true;
            break;
        }

        // enrich the reduced spaces at the selected parameter
        b.add_to_pool(&mu_hat)?;
        b.refresh_collateral();
        rom = b.rom_for(&b.small)?;
        let t = cache.state(&mu_hat)?;
        let mut added_total = 0;
        for field in [Field::Y, Field::Q] {
            let over = match Estimator::new(&rom, cal).estimate(&rom, &mu_hat) {
                Ok(e) => match field {
                    Field::Y => e.delta_y > cfg.tol,
                    Field::Q => e.delta_q > cfg.tol,
                },
                Err(_) => true,
            };
            if !over {
                continue;
            }
            let (snaps, basis, gram, g) = match field {
                Field::Y => (&t.y, &b.small.psi_y, &ops.sy, &b.gy),
                Field::Q => (&t.q, &b.small.psi_q, &ops.sq, &b.gq),
            };
            let cand = primary_candidates(snaps, basis, gram, g, cfg.pod_tol, cfg.max_new_modes);
            let mut added = 0;
            for j in 0..cand.ncols() {
                if b.small.l_y() + b.small.l_q() >= cfg.max_basis {
                    break;
                }
                let col = cand.columns(j, 1).into_owned();
                match field {
                    Field::Y => b.small.psi_y = hcat(&b.small.psi_y, &col),
                    Field::Q => b.small.psi_q = hcat(&b.small.psi_q, &col),
                }
                added += 1;
                rom = b.rom_for(&b.small)?;
                let done = match Estimator::new(&rom, cal).estimate(&rom, &mu_hat) {
                    Ok(e) => match field {
                        Field::Y => e.delta_y <= cfg.tol,
                        Field::Q => e.delta_q <= cfg.tol,
                    },
                    Err(_) => false,
                };
                if done {
                    break;
                }
            }
            log::info!("enriched {field:?} with {added} modes at {mu_hat}");
            added_total += added;
        }
        if added_total == 0 && b.small.l_y() + b.small.l_q() < cfg.max_basis {
            log::warn!("no new modes at {mu_hat}; stopping");
            break;
        }
        rom = b.rom_for(&b.small)?;
        let (r, c) = b.enforce_saturation(rom)?;
        rom = r;
        cal = c;
    }

    Ok(GreedyResult { rom, calibration: cal, history, capped, fom_solves: cache.solves(), elapsed: start.elapsed() })
}
