//! Box-constrained projected BFGS with an epsilon-active set.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::{Parameter, ParameterBox, N_PARAMS};

/// Value and gradient of an objective at one parameter. `tr_ratio` and
/// `delta_j` are zero for objectives without an error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    pub grad: [f64; N_PARAMS],
    pub tr_ratio: f64,
    pub delta_j: f64,
}

pub trait Objective {
    fn evaluate(&mut self, mu: &Parameter) -> Result<Evaluation>;

    /// Like [`Objective::evaluate`] where the gradient may be left unset.
    fn value(&mut self, mu: &Parameter) -> Result<Evaluation> {
        self.evaluate(mu)
    }
}

/// `|mu - P(mu - g)|_2`.
pub fn projected_gradient_norm(bounds: &ParameterBox, mu: &Parameter, grad: &[f64; N_PARAMS]) -> f64 {
    let step = bounds.project(&mu.axpy(-1.0, grad));
    mu.distance(&step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    /// Stop when the projected gradient norm is at most this.
    pub tol: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Length cap of the first step, taken before any curvature is known.
    pub first_step: f64,
    /// Upper bound of the active-set threshold.
    pub active_eps: f64,
    /// Trust-region constraint `tr_ratio <= radius` on every iterate.
    pub radius: Option<f64>,
    /// Stop once `tr_ratio >= boundary_fraction * radius`.
    pub boundary_fraction: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iterations: 200,
            armijo: 1e-4,
            max_backtracks: 30,
            first_step: 0.5,
            active_eps: 1e-6,
            radius: None,
            boundary_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    /// Reached the trust-region boundary.
    Boundary,
    MaxIterations,
    /// No acceptable step along the search direction.
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub mu: Parameter,
    pub eval: Evaluation,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Accepted iterates with their values and the evaluation count at acceptance.
    pub trace: Vec<(Parameter, f64, usize)>,
}

fn vec4(a: &[f64; N_PARAMS]) -> Vector4<f64> {
    Vector4::from_column_slice(a)
}

fn diff(a: &Parameter, b: &Parameter) -> Vector4<f64> {
    Vector4::from_fn(|i, _| a[i] - b[i])
}

/// Minimizes `obj` over `bounds` from `start`. `start_eval` avoids a repeated
/// evaluation when the caller already has it.
pub fn projected_bfgs<O: Objective>(
    obj: &mut O,
    bounds: &ParameterBox,
    start: &Parameter,
    start_eval: Option<Evaluation>,
    opts: &BfgsOptions,
) -> Result<BfgsOutcome> {
    let mut x = bounds.project(start);
    let mut evaluations = 0;
    let mut e = match start_eval {
        Some(e) => e,
        None => {
            evaluations += 1;
            obj.evaluate(&x)?
        }
    };
    let mut h = Matrix4::<f64>::identity();
    let mut curvature_known = false;
    let mut trace = vec![(x, e.value, evaluations)];

    for it in 0..opts.max_iterations {
        let pg = projected_gradient_norm(bounds, &x, &e.grad);
        if pg <= opts.tol {
            return Ok(BfgsOutcome { mu: x, eval: e, iterations: it, evaluations, reason: StopReason::Converged, trace });
        }
        let eps = opts.active_eps.min(pg);
        let g = vec4(&e.grad);
        let active: [bool; N_PARAMS] = std::array::from_fn(|i| {
            (x[i] - bounds.lower[i] <= eps && g[i] > 0.0) || (bounds.upper[i] - x[i] <= eps && g[i] < 0.0)
        });
        let mut d = direction(&h, &g, &active);
        if !curvature_known {
            let n = d.norm();
            if n > opts.first_step {
                d *= opts.first_step / n;
            }
        }
        if g.dot(&d) >= 0.0 {
            // lost descent after active-set changes: restart from steepest descent
            h = Matrix4::identity();
            curvature_known = false;
            d = -g * (opts.first_step / g.norm()).min(1.0);
        }

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let step: [f64; N_PARAMS] = d.into();
            let xt = bounds.project(&x.axpy(lambda, &step));
            let s = diff(&xt, &x);
            if s.norm() == 0.0 {
                break;
            }
            evaluations += 1;
            match obj.evaluate(&xt) {
                Ok(et) => {
                    let inside = opts.radius.is_none_or(|r| et.tr_ratio <= r);
                    let decrease = g.dot(&s).min(0.0);
                    if inside && et.value < e.value && et.value <= e.value + opts.armijo * decrease {
                        accepted = Some((xt, et, s));
                        break;
                    }
                }
                Err(err) => log::debug!("trial point {xt} rejected: {err}"),
            }
            lambda *= 0.5;
        }
        let Some((xt, et, s)) = accepted else {
            return Ok(BfgsOutcome { mu: x, eval: e, iterations: it, evaluations, reason: StopReason::LineSearch, trace });
        };

        // curvature pairs on the free variables only
        let mut s = s;
        let mut y = vec4(&et.grad) - g;
        for i in 0..N_PARAMS {
            if active[i] {
                s[i] = 0.0;
                y[i] = 0.0;
            }
        }
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !curvature_known {
                h = Matrix4::identity() * (sy / y.dot(&y));
                curvature_known = true;
            }
            let rho = 1.0 / sy;
            let i = Matrix4::<f64>::identity();
            h = (i - s * y.transpose() * rho) * h * (i - y * s.transpose() * rho) + s * s.transpose() * rho;
        }
        log::debug!("bfgs {it}: value {:.9e}, projected gradient {pg:.3e}, step {lambda:.3e}, active {active:?}", et.value);
        x = xt;
        e = et;
        trace.push((x, e.value, evaluations));
        if let Some(r) = opts.radius {
            if e.tr_ratio >= opts.boundary_fraction * r {
                return Ok(BfgsOutcome { mu: x, eval: e, iterations: it + 1, evaluations, reason: StopReason::Boundary, trace });
            }
        }
    }
    let reason = if projected_gradient_norm(bounds, &x, &e.grad) <= opts.tol { StopReason::Converged } else { StopReason::MaxIterations };
    Ok(BfgsOutcome { mu: x, eval: e, iterations: opts.max_iterations, evaluations, reason, trace })
}

/// `-(P_A + P_I H P_I) g`.
fn direction(h: &Matrix4<f64>, g: &Vector4<f64>, active: &[bool; N_PARAMS]) -> Vector4<f64> {
    let mut gi = *g;
    for i in 0..N_PARAMS {
        if active[i] {
            gi[i] = 0.0;
        }
    }
    let mut d = -(h * gi);
    for i in 0..N_PARAMS {
        if active[i] {
            d[i] = -g[i];
        }
    }
    d
}
