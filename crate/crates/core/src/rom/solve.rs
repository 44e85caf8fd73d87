//! Reduced Newton solver, reduced sensitivities and lifting.

use nalgebra::{DMatrix, DVector};

use super::operators::{ReducedBasis, RomOperators};
use crate::error::{Error, Result};
use crate::fom::{f_eval, f_partials, newton};
use crate::linalg::dense_solve;
use crate::problem::{Parameter, N_PARAMS};

/// Reduced coefficients; column `k` belongs to `t_k`.
#[derive(Debug, Clone)]
pub struct RomTrajectory {
    pub yhat: DMatrix<f64>,
    pub qhat: DMatrix<f64>,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct RomSensitivities {
    pub sy: [DMatrix<f64>; N_PARAMS],
    pub sq: [DMatrix<f64>; N_PARAMS],
}

/// Nonlinearity and its partials at the interpolation points.
struct Sampled {
    f: DVector<f64>,
    dy: DVector<f64>,
    dq: DVector<f64>,
}

fn sample(ops: &RomOperators, y: &DVector<f64>, q: &DVector<f64>, partials: bool) -> Sampled {
    let yp = &ops.psi_hat_y * y;
    let qp = &ops.psi_hat_q * q;
    let l = yp.len();
    let f = DVector::from_fn(l, |i, _| f_eval(yp[i], qp[i]));
    if !partials {
        return Sampled { f, dy: DVector::zeros(0), dq: DVector::zeros(0) };
    }
    let mut dy = DVector::zeros(l);
    let mut dq = DVector::zeros(l);
    for i in 0..l {
        let (a, b) = f_partials(yp[i], qp[i]);
        dy[i] = a;
        dq[i] = b;
    }
    Sampled { f, dy, dq }
}

fn scale_rows(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

fn elliptic_residual(mu: &Parameter, ops: &RomOperators, y: &DVector<f64>, q: &DVector<f64>, k: usize) -> DVector<f64> {
    let s = sample(ops, y, q, false);
    &ops.a2 * q * mu[2] + &ops.gq * s.f * mu[3] + ops.b.column(k)
}

fn elliptic_jacobian(mu: &Parameter, ops: &RomOperators, y: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let s = sample(ops, y, q, true);
    &ops.a2 * mu[2] + &ops.gq * scale_rows(&ops.psi_hat_q, &s.dq) * mu[3]
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

fn unstack(z: &DVector<f64>, ly: usize) -> (DVector<f64>, DVector<f64>) {
    (z.rows(0, ly).into_owned(), z.rows(ly, z.len() - ly).into_owned())
}

#[allow(clippy::too_many_arguments)]
fn step_residual(
    mu: &Parameter,
    ops: &RomOperators,
    bmat: &DMatrix<f64>,
    y_prev: &DVector<f64>,
    y: &DVector<f64>,
    q: &DVector<f64>,
    k: usize,
) -> DVector<f64> {
    let dt = ops.grid.dt;
    let s = sample(ops, y, q, false);
    let f1 = bmat * y - &ops.my * y_prev - &ops.gy * &s.f * (mu[1] * dt);
    let f2 = &ops.a2 * q * mu[2] + &ops.gq * &s.f * mu[3] + ops.b.column(k);
    stack(&f1, &f2)
}

/// Jacobian of one reduced implicit Euler step in stacked ordering.
pub fn rom_jacobian(mu: &Parameter, ops: &RomOperators, y: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let dt = ops.grid.dt;
    let (ly, lq) = (ops.l_y(), ops.l_q());
    let s = sample(ops, y, q, true);
    let hy = scale_rows(&ops.psi_hat_y, &s.dy);
    let hq = scale_rows(&ops.psi_hat_q, &s.dq);
    let mut j = DMatrix::zeros(ly + lq, ly + lq);
    j.view_mut((0, 0), (ly, ly))
        .copy_from(&(&ops.my + &ops.a1 * (mu[0] * dt) - &ops.gy * &hy * (mu[1] * dt)));
    j.view_mut((0, ly), (ly, lq)).copy_from(&(&ops.gy * &hq * (-mu[1] * dt)));
    j.view_mut((ly, 0), (lq, ly)).copy_from(&(&ops.gq * &hy * mu[3]));
    j.view_mut((ly, ly), (lq, lq)).copy_from(&(&ops.a2 * mu[2] + &ops.gq * &hq * mu[3]));
    j
}

/// Reduced trajectory; every operation is independent of the full dimension.
pub fn solve_rom(mu: &Parameter, ops: &RomOperators) -> Result<RomTrajectory> {
    let kk = ops.grid.len();
    let (ly, lq) = (ops.l_y(), ops.l_q());
    let mut yhat = DMatrix::zeros(ly, kk);
    let mut qhat = DMatrix::zeros(lq, kk);
    let mut iterations = 0;

    let y1 = dense_solve(ops.my.clone(), &ops.y_init)?;
    let mut q1 = DVector::zeros(lq);
    newton(
        &mut q1,
        &ops.newton,
        |q| elliptic_residual(mu, ops, &y1, q, 0),
        |q, r| dense_solve(elliptic_jacobian(mu, ops, &y1, q), &(-r)),
    )
    .map_err(|s| Error::NonConvergence { iterations: s.iterations, residual: s.residual })?;
    yhat.set_column(0, &y1);
    qhat.set_column(0, &q1);

    let bmat = &ops.my + &ops.a1 * (mu[0] * ops.grid.dt);
    let mut z = stack(&y1, &q1);
    for k in 1..kk {
        let y_prev = yhat.column(k - 1).into_owned();
        let stats = newton(
            &mut z,
            &ops.newton,
            |z| {
                let (y, q) = unstack(z, ly);
                step_residual(mu, ops, &bmat, &y_prev, &y, &q, k)
            },
            |z, r| {
                let (y, q) = unstack(z, ly);
                dense_solve(rom_jacobian(mu, ops, &y, &q), &(-r))
            },
        )
        .map_err(|s| Error::NewtonDiverged { step: k, residual: s.residual })?;
        iterations += stats.iterations;
        yhat.set_column(k, &z.rows(0, ly));
        qhat.set_column(k, &z.rows(ly, lq));
    }
    Ok(RomTrajectory { yhat, qhat, newton_iterations: iterations })
}

/// Derivatives of the reduced trajectory with respect to each parameter.
pub fn solve_rom_sensitivities(mu: &Parameter, ops: &RomOperators, traj: &RomTrajectory) -> Result<RomSensitivities> {
    let kk = ops.grid.len();
    let dt = ops.grid.dt;
    let (ly, lq) = (ops.l_y(), ops.l_q());
    let mut sy: [DMatrix<f64>; N_PARAMS] = std::array::from_fn(|_| DMatrix::zeros(ly, kk));
    let mut sq: [DMatrix<f64>; N_PARAMS] = std::array::from_fn(|_| DMatrix::zeros(lq, kk));

    let y0 = traj.yhat.column(0).into_owned();
    let q0 = traj.qhat.column(0).into_owned();
    let lu0 = elliptic_jacobian(mu, ops, &y0, &q0).lu();
    let f0 = sample(ops, &y0, &q0, false).f;
    for (i, rhs) in [(2, &ops.a2 * &q0), (3, &ops.gq * &f0)] {
        let s = lu0.solve(&(-rhs)).ok_or(Error::Singular { pivot: 0 })?;
        sq[i].set_column(0, &s);
    }

    for k in 1..kk {
        let y = traj.yhat.column(k).into_owned();
        let q = traj.qhat.column(k).into_owned();
        let lu = rom_jacobian(mu, ops, &y, &q).lu();
        let f = sample(ops, &y, &q, false).f;
        let zy = DVector::zeros(ly);
        let zq = DVector::zeros(lq);
        let partials = [
            stack(&(&ops.a1 * &y * dt), &zq),
            stack(&(&ops.gy * &f * -dt), &zq),
            stack(&zy, &(&ops.a2 * &q)),
            stack(&zy, &(&ops.gq * &f)),
        ];
        for i in 0..N_PARAMS {
            let carry = &ops.my * sy[i].column(k - 1);
            let rhs = -&partials[i] + stack(&carry, &zq);
            let s = lu.solve(&rhs).ok_or(Error::Singular { pivot: k })?;
            sy[i].set_column(k, &s.rows(0, ly));
            sq[i].set_column(k, &s.rows(ly, lq));
        }
    }
    Ok(RomSensitivities { sy, sq })
}

/// Finite-element coefficients `(Psi_y yhat, Psi_q qhat)` of a reduced trajectory.
pub fn lift(basis: &ReducedBasis, traj: &RomTrajectory) -> (DMatrix<f64>, DMatrix<f64>) {
    (&basis.psi_y * &traj.yhat, &basis.psi_q * &traj.qhat)
}
