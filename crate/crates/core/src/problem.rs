//! Problem data: parameters, the admissible box, coefficient fields, input
//! signals and the time grid.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar parameters (diffusion and coupling weights of both equations).
pub const N_PARAMS: usize = 4;

/// Parameter vector `(mu1, mu2, mu3, mu4)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Parameter(pub [f64; N_PARAMS]);

impl Parameter {
    pub fn splat(v: f64) -> Self {
        Parameter([v; N_PARAMS])
    }

    pub fn as_array(&self) -> &[f64; N_PARAMS] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Parameter) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn axpy(&self, alpha: f64, dir: &[f64; N_PARAMS]) -> Parameter {
        let mut out = *self;
        for (o, d) in out.0.iter_mut().zip(dir) {
            *o += alpha * d;
        }
        out
    }

    pub fn with(&self, i: usize, v: f64) -> Parameter {
        let mut out = *self;
        out.0[i] = v;
        out
    }

    /// Lexicographic comparison, used for deterministic tie-breaking.
    pub fn lex_cmp(&self, other: &Parameter) -> std::cmp::Ordering {
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    }
}

impl Index<usize> for Parameter {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Parameter {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Componentwise box `[lower, upper]` of admissible parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: Parameter,
    pub upper: Parameter,
}

impl ParameterBox {
    pub fn new(lower: Parameter, upper: Parameter) -> Result<Self> {
        for i in 0..N_PARAMS {
            if !(lower[i] > 0.0) || lower[i] > upper[i] {
                return Err(Error::InvalidInput(format!(
                    "parameter box needs 0 < lower <= upper, component {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(Parameter::splat(lo), Parameter::splat(hi))
    }

    pub fn contains(&self, mu: &Parameter) -> bool {
        (0..N_PARAMS).all(|i| mu[i] >= self.lower[i] && mu[i] <= self.upper[i])
    }

    pub fn project(&self, mu: &Parameter) -> Parameter {
        let mut out = *mu;
        for i in 0..N_PARAMS {
            out[i] = out[i].clamp(self.lower[i], self.upper[i]);
        }
        out
    }

    pub fn center(&self) -> Parameter {
        let mut c = self.lower;
        for i in 0..N_PARAMS {
            c[i] = 0.5 * (self.lower[i] + self.upper[i]);
        }
        c
    }

    /// Tensor grid with `per_dim` equispaced values per component, lexicographic order.
    pub fn grid(&self, per_dim: usize) -> Vec<Parameter> {
        assert!(per_dim >= 1);
        let axis = |i: usize, k: usize| {
            if per_dim == 1 {
                0.5 * (self.lower[i] + self.upper[i])
            } else {
                self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (per_dim - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(per_dim.pow(N_PARAMS as u32));
        for a in 0..per_dim {
            for b in 0..per_dim {
                for c in 0..per_dim {
                    for d in 0..per_dim {
                        out.push(Parameter([axis(0, a), axis(1, b), axis(2, c), axis(3, d)]));
                    }
                }
            }
        }
        out
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Parameter> {
        (0..count)
            .map(|_| {
                let mut mu = self.lower;
                for i in 0..N_PARAMS {
                    mu[i] = rng.random_range(self.lower[i]..=self.upper[i]);
                }
                mu
            })
            .collect()
    }
}

/// A real function on `[0, L]` (diffusion coefficients, initial state).
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Affine { at_zero: f64, slope: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ScalarField {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Affine { at_zero, slope } => at_zero + slope * x,
            ScalarField::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::Affine { at_zero, slope } => write!(f, "Affine({at_zero} + {slope} x)"),
            ScalarField::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Boundary input `u(t)`. Discontinuous signals are right-continuous.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Constant { value: f64 },
    Step { before: f64, after: f64, switch_time: f64 },
    Sinusoid { cos_amplitude: f64, cos_frequency: f64, sin_amplitude: f64, sin_frequency: f64 },
    /// Piecewise-linear through `(times[i], values[i])`, constant extrapolation.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl InputSignal {
    /// `u1(t) = 1`.
    pub fn u1() -> Self {
        InputSignal::Constant { value: 1.0 }
    }

    /// `u2(t) = -1` on `[0, 0.75)`, `+1` afterwards.
    pub fn u2() -> Self {
        InputSignal::Step { before: -1.0, after: 1.0, switch_time: 0.75 }
    }

    /// `u3(t) = 0.5 cos(10 t) + 0.4 sin(20 t)`.
    pub fn u3() -> Self {
        InputSignal::Sinusoid { cos_amplitude: 0.5, cos_frequency: 10.0, sin_amplitude: 0.4, sin_frequency: 20.0 }
    }

    /// `-3` on `[0, 4/3)`, `+3` on `[4/3, 2]`.
    pub fn step_pm3() -> Self {
        InputSignal::Step { before: -3.0, after: 3.0, switch_time: 4.0 / 3.0 }
    }

    pub fn zero() -> Self {
        InputSignal::Constant { value: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            InputSignal::Constant { value } => *value,
            InputSignal::Step { before, after, switch_time } => {
                if t < *switch_time {
                    *before
                } else {
                    *after
                }
            }
            InputSignal::Sinusoid { cos_amplitude, cos_frequency, sin_amplitude, sin_frequency } => {
                cos_amplitude * (cos_frequency * t).cos() + sin_amplitude * (sin_frequency * t).sin()
            }
            InputSignal::Tabulated { times, values } => interp_linear(times, values, t),
            InputSignal::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSignal::Constant { value } => write!(f, "Constant({value})"),
            InputSignal::Step { before, after, switch_time } => {
                write!(f, "Step({before} -> {after} at {switch_time})")
            }
            InputSignal::Sinusoid { cos_amplitude, cos_frequency, sin_amplitude, sin_frequency } => write!(
                f,
                "Sinusoid({cos_amplitude} cos({cos_frequency} t) + {sin_amplitude} sin({sin_frequency} t))"
            ),
            InputSignal::Tabulated { times, .. } => write!(f, "Tabulated({} samples)", times.len()),
            InputSignal::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

fn interp_linear(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.len() {
        0 => 0.0,
        1 => values[0],
        _ => {
            if t <= times[0] {
                return values[0];
            }
            let last = times.len() - 1;
            if t >= times[last] {
                return values[last];
            }
            let i = times.partition_point(|&s| s <= t) - 1;
            let w = (t - times[i]) / (times[i + 1] - times[i]);
            (1.0 - w) * values[i] + w * values[i + 1]
        }
    }
}

/// Everything defining one instance of the coupled system.
#[derive(Debug, Clone)]
pub struct ProblemDefinition {
    pub length: f64,
    pub kappa1: ScalarField,
    pub kappa2: ScalarField,
    pub y_init: ScalarField,
    pub input: InputSignal,
    pub final_time: f64,
    pub bounds: ParameterBox,
}

impl ProblemDefinition {
    /// Unit interval, `kappa1 = kappa2 = 1`, `y0 = 5`, box `[1, 5]^4`.
    pub fn standard(input: InputSignal, final_time: f64) -> Self {
        Self {
            length: 1.0,
            kappa1: ScalarField::Constant(1.0),
            kappa2: ScalarField::Constant(1.0),
            y_init: ScalarField::Constant(5.0),
            input,
            final_time,
            bounds: ParameterBox::uniform(1.0, 5.0).expect("static box"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::InvalidInput(format!("domain length must be positive, got {}", self.length)));
        }
        if !(self.final_time > 0.0) {
            return Err(Error::InvalidInput(format!("final time must be positive, got {}", self.final_time)));
        }
        ParameterBox::new(self.bounds.lower, self.bounds.upper)?;
        Ok(())
    }
}

/// Equidistant grid `t_k = k dt`, `k = 0..K-1` with trapezoidal weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidInput(format!("time grid needs at least 2 nodes, got {steps}")));
        }
        if !(final_time > 0.0) {
            return Err(Error::InvalidInput(format!("final time must be positive, got {final_time}")));
        }
        Ok(Self { steps, dt: final_time / (steps - 1) as f64 })
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn final_time(&self) -> f64 {
        self.dt * (self.steps - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.steps).map(|k| self.weight(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_weights_sum_to_horizon() {
        let g = TimeGrid::new(2.0, 201).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
        assert!(g.weights().iter().all(|w| *w > 0.0));
        assert_eq!(g.weight(0), 0.005);
        assert_eq!(g.weight(1), 0.01);
    }

    #[test]
    fn grid_rejects_single_node() {
        assert!(TimeGrid::new(1.0, 1).is_err());
    }

    #[test]
    fn u2_is_right_continuous() {
        let u = InputSignal::u2();
        assert_eq!(u.eval(0.5), -1.0);
        assert_eq!(u.eval(0.75), 1.0);
        assert_eq!(u.eval(1.0), 1.0);
    }

    #[test]
    fn tabulated_interpolates() {
        let u = InputSignal::Tabulated { times: vec![0.0, 1.0, 2.0], values: vec![0.0, 2.0, 0.0] };
        assert_eq!(u.eval(0.5), 1.0);
        assert_eq!(u.eval(1.5), 1.0);
        assert_eq!(u.eval(5.0), 0.0);
    }

    #[test]
    fn box_grid_has_625_points() {
        let b = ParameterBox::uniform(1.0, 5.0).unwrap();
        let g = b.grid(5);
        assert_eq!(g.len(), 625);
        assert_eq!(g[0], Parameter::splat(1.0));
        assert_eq!(g[624], Parameter::splat(5.0));
        assert_eq!(g[1], Parameter([1.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(ParameterBox::new(Parameter::splat(2.0), Parameter::splat(1.0)).is_err());
        assert!(ParameterBox::new(Parameter::splat(0.0), Parameter::splat(1.0)).is_err());
    }

    #[test]
    fn projection_clamps() {
        let b = ParameterBox::uniform(1.0, 5.0).unwrap();
        let p = b.project(&Parameter([0.0, 3.0, 7.0, 5.0]));
        assert_eq!(p, Parameter([1.0, 3.0, 5.0, 5.0]));
    }
}
