//! Discrete empirical interpolation of the nodal nonlinearity.

use nalgebra::{DMatrix, DVector};

use super::pod::{pod, PodRule};
use crate::error::{Error, Result};

/// Collateral basis, interpolation rows and `(P^T Psi_f)^{-1}`.
#[derive(Debug, Clone)]
pub struct DeimInterpolant {
    pub psi_f: DMatrix<f64>,
    /// Selected rows of the `V0`-indexed nonlinearity vector.
    pub points: Vec<usize>,
    pub pt_psi_inv: DMatrix<f64>,
}

impl DeimInterpolant {
    pub fn empty(n: usize) -> Self {
        Self { psi_f: DMatrix::zeros(n, 0), points: Vec::new(), pt_psi_inv: DMatrix::zeros(0, 0) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Interpolation rows for the `(n+1)`-sized `y`-block (shifted by the node at `x = 0`).
    pub fn padded_points(&self) -> Vec<usize> {
        self.points.iter().map(|p| p + 1).collect()
    }

    /// Collateral basis padded with a leading zero row.
    pub fn padded_basis(&self) -> DMatrix<f64> {
        let (n, l) = self.psi_f.shape();
        let mut out = DMatrix::zeros(n + 1, l);
        out.rows_mut(1, n).copy_from(&self.psi_f);
        out
    }

    /// `Psi_f (P^T Psi_f)^{-1}`.
    pub fn interpolation_matrix(&self) -> DMatrix<f64> {
        &self.psi_f * &self.pt_psi_inv
    }

    /// Reconstructs a full vector from its values at the interpolation points.
    pub fn interpolate(&self, samples: &DVector<f64>) -> DVector<f64> {
        &self.psi_f * (&self.pt_psi_inv * samples)
    }

    pub fn sample(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.points.len(), self.points.iter().map(|&p| v[p]))
    }
}

/// Greedy interpolation point selection for the columns of `basis`.
pub fn deim_points(basis: &DMatrix<f64>) -> Result<Vec<usize>> {
    let mut points: Vec<usize> = Vec::with_capacity(basis.ncols());
    for l in 0..basis.ncols() {
        let col = basis.column(l).into_owned();
        let r = if l == 0 {
            col
        } else {
            let u = basis.columns(0, l);
            let pu = DMatrix::from_fn(l, l, |i, j| u[(points[i], j)]);
            let rhs = DVector::from_fn(l, |i, _| col[points[i]]);
            let c = pu.lu().solve(&rhs).ok_or(Error::Singular { pivot: l })?;
            col - u * c
        };
        let (p, v) = r.iter().enumerate().fold((0, -1.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
        if !(v > 0.0) || points.contains(&p) {
            return Err(Error::RankDeficient { requested: basis.ncols(), rank: l });
        }
        points.push(p);
    }
    Ok(points)
}

/// DEIM from nonlinearity snapshots (one column per snapshot).
/// Identically vanishing snapshots give an empty interpolant.
pub fn deim_build(snapshots: &DMatrix<f64>, rule: PodRule) -> Result<DeimInterpolant> {
    match pod(snapshots, None, rule) {
        Ok(p) => from_basis(p.modes),
        Err(Error::RankDeficient { rank: 0, .. }) => Ok(DeimInterpolant::empty(snapshots.nrows())),
        Err(e) => Err(e),
    }
}

pub fn from_basis(psi_f: DMatrix<f64>) -> Result<DeimInterpolant> {
    if psi_f.ncols() == 0 {
        return Ok(DeimInterpolant::empty(psi_f.nrows()));
    }
    let points = deim_points(&psi_f)?;
    let l = points.len();
    let pt = DMatrix::from_fn(l, l, |i, j| psi_f[(points[i], j)]);
    let pt_psi_inv = pt.try_inverse().ok_or(Error::Singular { pivot: 0 })?;
    Ok(DeimInterpolant { psi_f, points, pt_psi_inv })
}
