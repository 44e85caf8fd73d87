//! Full-order model: implicit Euler in time, a coupled Newton solve per step,
//! consistent initial elliptic state and forward sensitivities.
//!
//! Stacked vectors are `[y (n+1); q (n)]`. The Newton systems are solved in an
//! interleaved ordering (`y_0, y_1, q_1, y_2, q_2, ...`) which turns the
//! coupled Jacobian into a band matrix of half-bandwidth `2 p + 1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fe::{assemble, build_space, project_initial, AssembledOperators, FeSpace};
use crate::linalg::{BandLu, BandMatrix};
use crate::problem::{Parameter, ProblemDefinition, TimeGrid, N_PARAMS};

/// Lower bound applied to `y` wherever `1 / sqrt(y)` appears.
pub const Y_FLOOR: f64 = 1e-12;

/// `f(y, q) = sqrt(y) sinh(q)`; negative `y` is treated as zero.
#[inline]
pub fn f_eval(y: f64, q: f64) -> f64 {
    y.max(0.0).sqrt() * q.sinh()
}

/// `(df/dy, df/dq)` with `y` floored at [`Y_FLOOR`].
#[inline]
pub fn f_partials(y: f64, q: f64) -> (f64, f64) {
    let sy = y.max(Y_FLOOR).sqrt();
    (q.sinh() / (2.0 * sy), sy * q.cosh())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Maximal number of step halvings in the Armijo line search.
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, max_iter: 25, max_halvings: 10 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidInput(format!("invalid Newton configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton iteration on `F(z) = 0`. `direction(z, F(z))` returns the
/// solution `d` of `J(z) d = -F(z)`.
pub(crate) fn newton<R, D>(
    z: &mut DVector<f64>,
    cfg: &NewtonConfig,
    mut residual: R,
    mut direction: D,
) -> std::result::Result<NewtonStats, NewtonStats>
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
    D: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut r = residual(z);
    let mut norm = r.norm();
    for it in 0..cfg.max_iter {
        if norm <= cfg.abs_tol {
            return Ok(NewtonStats { iterations: it, residual: norm });
        }
        if !norm.is_finite() {
            break;
        }
        let d = match direction(z, &r) {
            Ok(d) => d,
            Err(_) => return Err(NewtonStats { iterations: it, residual: norm }),
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial = &*z + &d * lambda;
            let rt = residual(&trial);
            let nt = rt.norm();
            if nt.is_finite() && nt <= (1.0 - 1e-4 * lambda) * norm {
                accepted = Some((trial, rt, nt));
                break;
            }
            if nt.is_finite() {
                accepted = Some((trial, rt, nt));
            }
            lambda *= 0.5;
        }
        let Some((trial, rt, nt)) = accepted else {
            break;
        };
        // A full step at round-off level with no further decrease means the
        // residual has reached its attainable floor.
        let tiny = d.amax() <= 8.0 * f64::EPSILON * (1.0 + z.amax());
        *z = trial;
        r = rt;
        norm = nt;
        if tiny && norm <= 1e3 * cfg.abs_tol {
            return Ok(NewtonStats { iterations: it + 1, residual: norm });
        }
    }
    if norm <= cfg.abs_tol {
        return Ok(NewtonStats { iterations: cfg.max_iter, residual: norm });
    }
    Err(NewtonStats { iterations: cfg.max_iter, residual: norm })
}

#[inline]
fn yi(i: usize) -> usize {
    if i == 0 {
        0
    } else {
        2 * i - 1
    }
}

#[inline]
fn qi(j: usize) -> usize {
    2 * j + 2
}

/// Packs stacked `(y, q)` into the interleaved Newton ordering.
pub fn interleave(y: &[f64], q: &[f64]) -> DVector<f64> {
    assert_eq!(y.len(), q.len() + 1);
    let mut z = DVector::zeros(y.len() + q.len());
    for (i, v) in y.iter().enumerate() {
        z[yi(i)] = *v;
    }
    for (j, v) in q.iter().enumerate() {
        z[qi(j)] = *v;
    }
    z
}

/// Inverse of [`interleave`].
pub fn split(z: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = (z.len() - 1) / 2;
    let y = DVector::from_fn(n + 1, |i, _| z[yi(i)]);
    let q = DVector::from_fn(n, |j, _| z[qi(j)]);
    (y, q)
}

/// Nodal values of `f` at nodes `1..=n` (the value at node 0 is zero since `q(0) = 0`).
pub fn nodal_f(y: &[f64], q: &[f64]) -> DVector<f64> {
    DVector::from_fn(q.len(), |j, _| f_eval(y[j + 1], q[j]))
}

fn padded(f: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(f.len() + 1);
    out.rows_mut(1, f.len()).copy_from(f);
    out
}

/// Stacked residual of one implicit Euler step.
#[allow(clippy::too_many_arguments)]
pub fn residual(
    mu: &Parameter,
    y_prev: &DVector<f64>,
    y: &DVector<f64>,
    q: &DVector<f64>,
    b: &DVector<f64>,
    ops: &AssembledOperators,
    dt: f64,
) -> DVector<f64> {
    let n = ops.dim_v0();
    let fy = padded(&nodal_f(y.as_slice(), q.as_slice()));
    let fq = fy.rows(1, n).into_owned();
    let f1 = ops.my.mul_vec(y) + ops.a1.mul_vec(y) * (mu[0] * dt)
        - ops.my.mul_vec(y_prev)
        - ops.my.mul_vec(&fy) * (mu[1] * dt);
    let f2 = ops.a2.mul_vec(q) * mu[2] + ops.mq.mul_vec(&fq) * mu[3] + b;
    let mut out = DVector::zeros(2 * n + 1);
    out.rows_mut(0, n + 1).copy_from(&f1);
    out.rows_mut(n + 1, n).copy_from(&f2);
    out
}

/// Jacobian of [`residual`] with respect to `(y, q)` in interleaved ordering.
pub fn jacobian(mu: &Parameter, y: &[f64], q: &[f64], ops: &AssembledOperators, dt: f64) -> BandMatrix {
    let n = ops.dim_v0();
    let p = ops.my.upper_bandwidth();
    let mut fy = vec![0.0; n + 1];
    let mut fq = vec![0.0; n + 1];
    for j in 1..=n {
        let (a, b) = f_partials(y[j], q[j - 1]);
        fy[j] = a;
        fq[j] = b;
    }
    let c1 = mu[0] * dt;
    let c2 = mu[1] * dt;
    let mut jac = BandMatrix::zeros(2 * n + 1, 2 * p + 1, 2 * p + 1);
    for i in 0..=n {
        let (lo, hi) = ops.my.row_range(i);
        for j in lo..hi {
            let m = ops.my.get(i, j);
            jac.add(yi(i), yi(j), m + c1 * ops.a1.get(i, j) - c2 * m * fy[j]);
            if j >= 1 {
                jac.add(yi(i), qi(j - 1), -c2 * m * fq[j]);
            }
        }
    }
    for r in 0..n {
        let (lo, hi) = ops.mq.row_range(r);
        for c in lo..hi {
            let m = ops.mq.get(r, c);
            jac.add(qi(r), yi(c + 1), mu[3] * m * fy[c + 1]);
            jac.add(qi(r), qi(c), mu[2] * ops.a2.get(r, c) + mu[3] * m * fq[c + 1]);
        }
    }
    jac
}

/// [`jacobian`] as a dense matrix in stacked ordering.
pub fn jacobian_dense(mu: &Parameter, y: &[f64], q: &[f64], ops: &AssembledOperators, dt: f64) -> DMatrix<f64> {
    let n = ops.dim_v0();
    let jac = jacobian(mu, y, q, ops, dt);
    let perm: Vec<usize> = (0..=n).map(yi).chain((0..n).map(qi)).collect();
    DMatrix::from_fn(2 * n + 1, 2 * n + 1, |a, b| jac.get(perm[a], perm[b]))
}

/// Elliptic-only Jacobian `mu3 A2 + mu4 Mq diag(df/dq)`.
fn elliptic_jacobian(mu: &Parameter, y: &[f64], q: &[f64], ops: &AssembledOperators) -> BandMatrix {
    let mut jac = ops.a2.lincomb(mu[2], &ops.mq, 0.0);
    for r in 0..ops.dim_v0() {
        let (lo, hi) = ops.mq.row_range(r);
        for c in lo..hi {
            let (_, dq) = f_partials(y[c + 1], q[c]);
            jac.add(r, c, mu[3] * ops.mq.get(r, c) * dq);
        }
    }
    jac
}

fn elliptic_residual(mu: &Parameter, y: &[f64], q: &DVector<f64>, b: &DVector<f64>, ops: &AssembledOperators) -> DVector<f64> {
    let f = nodal_f(y, q.as_slice());
    ops.a2.mul_vec(q) * mu[2] + ops.mq.mul_vec(&f) * mu[3] + b
}

/// Solves `mu3 A2 q + mu4 Mq f(y1, q) + b1 = 0` by Newton from `q = 0`.
pub fn solve_consistent_initial_q(
    mu: &Parameter,
    y1: &DVector<f64>,
    u1: f64,
    ops: &AssembledOperators,
    cfg: &NewtonConfig,
) -> Result<DVector<f64>> {
    let mut b = DVector::zeros(ops.dim_v0());
    b[ops.boundary_index] = u1;
    let mut q = DVector::zeros(ops.dim_v0());
    let y = y1.as_slice();
    newton(
        &mut q,
        cfg,
        |q| elliptic_residual(mu, y, q, &b, ops),
        |q, r| Ok(-BandLu::factor(&elliptic_jacobian(mu, y, q.as_slice(), ops))?.solve(r)),
    )
    .map_err(|s| Error::NonConvergence { iterations: s.iterations, residual: s.residual })?;
    Ok(q)
}

/// What to do when `y` drops below [`Y_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositivityPolicy {
    #[default]
    Reject,
    Record,
}

/// Range of `y` over all nodes and steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityMonitor {
    pub min_y: f64,
    pub max_y: f64,
    pub first_violation: Option<usize>,
}

impl PositivityMonitor {
    fn new() -> Self {
        Self { min_y: f64::INFINITY, max_y: f64::NEG_INFINITY, first_violation: None }
    }

    fn record(&mut self, k: usize, y: &DVector<f64>) {
        let lo = y.min();
        self.min_y = self.min_y.min(lo);
        self.max_y = self.max_y.max(y.max());
        if lo < Y_FLOOR && self.first_violation.is_none() {
            self.first_violation = Some(k);
        }
    }

    /// Smallest `M` with `1/M <= y <= M` on the trajectory.
    pub fn bound(&self) -> f64 {
        self.max_y.max(1.0 / self.min_y.max(f64::MIN_POSITIVE))
    }
}

/// Full-order trajectory; column `k` holds the state at `t_k`.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub y: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub grid: TimeGrid,
    pub newton_iterations: usize,
    pub monitor: PositivityMonitor,
}

impl StateTrajectory {
    /// Nodal nonlinearity at nodes `1..=n` for every time step.
    pub fn nonlinearity(&self) -> DMatrix<f64> {
        let n = self.q.nrows();
        let mut out = DMatrix::zeros(n, self.q.ncols());
        for k in 0..self.q.ncols() {
            for j in 0..n {
                out[(j, k)] = f_eval(self.y[(j + 1, k)], self.q[(j, k)]);
            }
        }
        out
    }
}

/// Derivatives of a trajectory with respect to each parameter.
#[derive(Debug, Clone)]
pub struct SensitivityTrajectory {
    pub sy: [DMatrix<f64>; N_PARAMS],
    pub sq: [DMatrix<f64>; N_PARAMS],
}

/// Everything needed to run the full-order solver for any parameter.
#[derive(Debug, Clone)]
pub struct FullOrderModel {
    pub problem: ProblemDefinition,
    pub space: FeSpace,
    pub ops: AssembledOperators,
    pub grid: TimeGrid,
    pub newton: NewtonConfig,
    pub positivity: PositivityPolicy,
    pub y_init: DVector<f64>,
    /// `u(t_k)` for every time node.
    pub inputs: Vec<f64>,
}

impl FullOrderModel {
    pub fn new(problem: ProblemDefinition, n_cells: usize, order: usize, steps: usize) -> Result<Self> {
        let space = build_space(&problem, n_cells, order)?;
        let ops = assemble(&problem, &space)?;
        let grid = TimeGrid::new(problem.final_time, steps)?;
        let y_init = project_initial(&problem, &space, &ops)?;
        let inputs = (0..grid.len()).map(|k| problem.input.eval(grid.time(k))).collect();
        Ok(Self {
            problem,
            space,
            ops,
            grid,
            newton: NewtonConfig::default(),
            positivity: PositivityPolicy::default(),
            y_init,
            inputs,
        })
    }

    pub fn dim_v(&self) -> usize {
        self.ops.dim_v()
    }

    pub fn dim_v0(&self) -> usize {
        self.ops.dim_v0()
    }

    pub fn boundary(&self, k: usize) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim_v0());
        b[self.ops.boundary_index] = self.inputs[k];
        b
    }

    pub fn solve(&self, mu: &Parameter) -> Result<StateTrajectory> {
        solve_fom(mu, self)
    }

    pub fn sensitivities(&self, mu: &Parameter, traj: &StateTrajectory) -> Result<SensitivityTrajectory> {
        solve_sensitivities(mu, traj, self)
    }
}

/// Implicit Euler trajectory for parameter `mu`.
pub fn solve_fom(mu: &Parameter, model: &FullOrderModel) -> Result<StateTrajectory> {
    model.newton.validate()?;
    if !model.problem.bounds.contains(mu) {
        log::warn!("parameter {mu} lies outside the admissible box");
    }
    let ops = &model.ops;
    let grid = model.grid;
    let dt = grid.dt;
    let (nv, n) = (model.dim_v(), model.dim_v0());
    let mut ys = DMatrix::zeros(nv, grid.len());
    let mut qs = DMatrix::zeros(n, grid.len());
    let mut monitor = PositivityMonitor::new();
    let mut iterations = 0;

    let y1 = model.y_init.clone();
    let q1 = solve_consistent_initial_q(mu, &y1, model.inputs[0], ops, &model.newton)?;
    monitor.record(0, &y1);
    ys.set_column(0, &y1);
    qs.set_column(0, &q1);

    let mut z = interleave(y1.as_slice(), q1.as_slice());
    let perm: Vec<usize> = (0..nv).map(yi).chain((0..n).map(qi)).collect();
    for k in 1..grid.len() {
        let y_prev = ys.column(k - 1).into_owned();
        let b = model.boundary(k);
        let stats = newton(
            &mut z,
            &model.newton,
            |z| {
                let (y, q) = split(z.as_slice());
                let f = residual(mu, &y_prev, &y, &q, &b, ops, dt);
                let mut out = DVector::zeros(f.len());
                for (s, &t) in perm.iter().enumerate() {
                    out[t] = f[s];
                }
                out
            },
            |z, r| {
                let (y, q) = split(z.as_slice());
                let lu = BandLu::factor(&jacobian(mu, y.as_slice(), q.as_slice(), ops, dt))?;
                Ok(-lu.solve(r))
            },
        )
        .map_err(|s| Error::NewtonDiverged { step: k, residual: s.residual })?;
        iterations += stats.iterations;
        let (y, q) = split(z.as_slice());
        monitor.record(k, &y);
        if model.positivity == PositivityPolicy::Reject && monitor.first_violation == Some(k) {
            return Err(Error::PositivityLost { step: k, min: y.min() });
        }
        ys.set_column(k, &y);
        qs.set_column(k, &q);
    }
    Ok(StateTrajectory { y: ys, q: qs, grid, newton_iterations: iterations, monitor })
}

/// Partial derivatives of the stacked residual with respect to each parameter.
fn residual_mu_derivatives(y: &DVector<f64>, q: &DVector<f64>, ops: &AssembledOperators, dt: f64) -> [DVector<f64>; 4] {
    let n = ops.dim_v0();
    let f = nodal_f(y.as_slice(), q.as_slice());
    let stacked = |top: Option<DVector<f64>>, bottom: Option<DVector<f64>>| {
        let mut out = DVector::zeros(2 * n + 1);
        if let Some(t) = top {
            out.rows_mut(0, n + 1).copy_from(&t);
        }
        if let Some(b) = bottom {
            out.rows_mut(n + 1, n).copy_from(&b);
        }
        out
    };
    [
        stacked(Some(ops.a1.mul_vec(y) * dt), None),
        stacked(Some(ops.my.mul_vec(&padded(&f)) * -dt), None),
        stacked(None, Some(ops.a2.mul_vec(q))),
        stacked(None, Some(ops.mq.mul_vec(&f))),
    ]
}

/// Forward sensitivities `d(y^k, q^k)/d mu_i` of a converged trajectory.
pub fn solve_sensitivities(mu: &Parameter, traj: &StateTrajectory, model: &FullOrderModel) -> Result<SensitivityTrajectory> {
    let ops = &model.ops;
    let dt = model.grid.dt;
    let (nv, n) = (model.dim_v(), model.dim_v0());
    let kk = traj.grid.len();
    let mut sy: [DMatrix<f64>; N_PARAMS] = std::array::from_fn(|_| DMatrix::zeros(nv, kk));
    let mut sq: [DMatrix<f64>; N_PARAMS] = std::array::from_fn(|_| DMatrix::zeros(n, kk));

    let y0 = traj.y.column(0).into_owned();
    let q0 = traj.q.column(0).into_owned();
    let lu0 = BandLu::factor(&elliptic_jacobian(mu, y0.as_slice(), q0.as_slice(), ops))?;
    let d0 = residual_mu_derivatives(&y0, &q0, ops, dt);
    for i in 0..N_PARAMS {
        let rhs = -d0[i].rows(nv, n).into_owned();
        sq[i].set_column(0, &lu0.solve(&rhs));
    }

    for k in 1..kk {
        let y = traj.y.column(k).into_owned();
        let q = traj.q.column(k).into_owned();
        let lu = BandLu::factor(&jacobian(mu, y.as_slice(), q.as_slice(), ops, dt))?;
        let d = residual_mu_derivatives(&y, &q, ops, dt);
        for i in 0..N_PARAMS {
            let carry = ops.my.mul_vec(&sy[i].column(k - 1).into_owned());
            let mut rhs = -d[i].clone();
            rhs.rows_mut(0, nv).axpy(1.0, &carry, 1.0);
            let mut zi = interleave(&rhs.as_slice()[..nv], &rhs.as_slice()[nv..]);
            lu.solve_in_place(zi.as_mut_slice());
            let (a, b) = split(zi.as_slice());
            sy[i].set_column(k, &a);
            sq[i].set_column(k, &b);
        }
    }
    Ok(SensitivityTrajectory { sy, sq })
}
