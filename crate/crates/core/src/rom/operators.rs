//! Reduced bases and the offline projection of all full-order operators.

use nalgebra::{DMatrix, DVector};

use super::deim::DeimInterpolant;
use crate::fom::{FullOrderModel, NewtonConfig};
use crate::linalg::BandMatrix;
use crate::problem::TimeGrid;

/// Coordinates of the reduced spaces in the finite-element bases.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    pub psi_y: DMatrix<f64>,
    pub psi_q: DMatrix<f64>,
}

impl ReducedBasis {
    pub fn l_y(&self) -> usize {
        self.psi_y.ncols()
    }

    pub fn l_q(&self) -> usize {
        self.psi_q.ncols()
    }

    /// `max(|Psi_y^T S_y Psi_y - I|, |Psi_q^T S_q Psi_q - I|)`.
    pub fn orthonormality_defect(&self, sy: &BandMatrix, sq: &BandMatrix) -> f64 {
        let dy = sy.project(&self.psi_y, &self.psi_y) - DMatrix::identity(self.l_y(), self.l_y());
        let dq = sq.project(&self.psi_q, &self.psi_q) - DMatrix::identity(self.l_q(), self.l_q());
        dy.amax().max(dq.amax())
    }
}

/// Enlarged bases whose leading `l_y` / `l_q` columns span the reduced spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnlargedBasis {
    pub psi_y: DMatrix<f64>,
    pub psi_q: DMatrix<f64>,
    pub l_y: usize,
    pub l_q: usize,
}

impl EnlargedBasis {
    /// Appends the columns of `extra_y` / `extra_q` to `small`.
    pub fn new(small: &ReducedBasis, extra_y: &DMatrix<f64>, extra_q: &DMatrix<f64>) -> Self {
        Self {
            psi_y: hcat(&small.psi_y, extra_y),
            psi_q: hcat(&small.psi_q, extra_q),
            l_y: small.l_y(),
            l_q: small.l_q(),
        }
    }

    pub fn m_y(&self) -> usize {
        self.psi_y.ncols()
    }

    pub fn m_q(&self) -> usize {
        self.psi_q.ncols()
    }

    pub fn reduced(&self) -> ReducedBasis {
        ReducedBasis {
            psi_y: self.psi_y.columns(0, self.l_y).into_owned(),
            psi_q: self.psi_q.columns(0, self.l_q).into_owned(),
        }
    }

    pub fn enlarged(&self) -> ReducedBasis {
        ReducedBasis { psi_y: self.psi_y.clone(), psi_q: self.psi_q.clone() }
    }

    pub fn extra_y(&self) -> DMatrix<f64> {
        self.psi_y.columns(self.l_y, self.m_y() - self.l_y).into_owned()
    }

    pub fn extra_q(&self) -> DMatrix<f64> {
        self.psi_q.columns(self.l_q, self.m_q() - self.l_q).into_owned()
    }

    /// The leading columns equal `small` exactly.
    pub fn is_nested(&self, small: &ReducedBasis) -> bool {
        self.l_y == small.l_y()
            && self.l_q == small.l_q()
            && self.psi_y.columns(0, self.l_y) == small.psi_y.columns(0, self.l_y)
            && self.psi_q.columns(0, self.l_q) == small.psi_q.columns(0, self.l_q)
    }
}

pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.ncols() == 0 {
        return a.clone();
    }
    if a.ncols() == 0 {
        return b.clone();
    }
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Misfit expansion coefficients `r1^k = Psi_q^T Mq w^k`, `r2^k = (w^k)^T Mq w^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVectors {
    pub r1: DMatrix<f64>,
    pub r2: Vec<f64>,
}

/// All reduced operators needed online. Nothing here has dimension `n`.
#[derive(Debug, Clone)]
pub struct RomOperators {
    pub my: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub mq: DMatrix<f64>,
    pub gram_y: DMatrix<f64>,
    pub gram_q: DMatrix<f64>,
    /// `Psi_y^T My Psi~_f (P^T Psi_f)^{-1}` with the padded collateral basis.
    pub gy: DMatrix<f64>,
    /// `Psi_q^T Mq Psi_f (P^T Psi_f)^{-1}`.
    pub gq: DMatrix<f64>,
    /// Rows of `Psi_y` at the padded interpolation points.
    pub psi_hat_y: DMatrix<f64>,
    /// Rows of `Psi_q` at the interpolation points.
    pub psi_hat_q: DMatrix<f64>,
    /// Reduced boundary vectors, one column per time node.
    pub b: DMatrix<f64>,
    /// `Psi_y^T My y0`.
    pub y_init: DVector<f64>,
    pub grid: TimeGrid,
    pub newton: NewtonConfig,
    pub cost: Option<CostVectors>,
}

impl RomOperators {
    pub fn l_y(&self) -> usize {
        self.my.nrows()
    }

    pub fn l_q(&self) -> usize {
        self.a2.nrows()
    }

    pub fn l_f(&self) -> usize {
        self.gy.ncols()
    }

    /// Operators of the space spanned by the leading `l_y` / `l_q` basis columns.
    pub fn truncate(&self, l_y: usize, l_q: usize) -> RomOperators {
        assert!(l_y <= self.l_y() && l_q <= self.l_q());
        let sq = |m: &DMatrix<f64>, r: usize| m.view((0, 0), (r, r)).into_owned();
        let rows = |m: &DMatrix<f64>, r: usize| m.rows(0, r).into_owned();
        let cols = |m: &DMatrix<f64>, c: usize| m.columns(0, c).into_owned();
        RomOperators {
            my: sq(&self.my, l_y),
            a1: sq(&self.a1, l_y),
            a2: sq(&self.a2, l_q),
            mq: sq(&self.mq, l_q),
            gram_y: sq(&self.gram_y, l_y),
            gram_q: sq(&self.gram_q, l_q),
            gy: rows(&self.gy, l_y),
            gq: rows(&self.gq, l_q),
            psi_hat_y: cols(&self.psi_hat_y, l_y),
            psi_hat_q: cols(&self.psi_hat_q, l_q),
            b: rows(&self.b, l_q),
            y_init: self.y_init.rows(0, l_y).into_owned(),
            grid: self.grid,
            newton: self.newton,
            cost: self.cost.as_ref().map(|c| CostVectors { r1: rows(&c.r1, l_q), r2: c.r2.clone() }),
        }
    }
}

/// Galerkin projection of the full-order operators onto `basis`, with the
/// nonlinearity handled by `deim`.
pub fn project_operators(model: &FullOrderModel, basis: &ReducedBasis, deim: &DeimInterpolant) -> RomOperators {
    let ops = &model.ops;
    let (py, pq) = (&basis.psi_y, &basis.psi_q);
    let w = deim.interpolation_matrix();
    let mut wp = DMatrix::zeros(w.nrows() + 1, w.ncols());
    wp.rows_mut(1, w.nrows()).copy_from(&w);
    let gy = py.transpose() * ops.my.mul_dense(&wp);
    let gq = pq.transpose() * ops.mq.mul_dense(&w);
    let psi_hat_y = DMatrix::from_fn(deim.len(), py.ncols(), |i, j| py[(deim.points[i] + 1, j)]);
    let psi_hat_q = DMatrix::from_fn(deim.len(), pq.ncols(), |i, j| pq[(deim.points[i], j)]);
    let brow = pq.row(ops.boundary_index).transpose();
    let mut b = DMatrix::zeros(pq.ncols(), model.grid.len());
    for (k, u) in model.inputs.iter().enumerate() {
        b.set_column(k, &(&brow * *u));
    }
    RomOperators {
        my: ops.my.project(py, py),
        a1: ops.a1.project(py, py),
        a2: ops.a2.project(pq, pq),
        mq: ops.mq.project(pq, pq),
        gram_y: ops.sy.project(py, py),
        gram_q: ops.sq.project(pq, pq),
        gy,
        gq,
        psi_hat_y,
        psi_hat_q,
        b,
        y_init: py.transpose() * ops.my.mul_vec(&model.y_init),
        grid: model.grid,
        newton: model.newton,
        cost: None,
    }
}

/// Misfit coefficients of data `w` (one `V0` column per time node).
pub fn cost_vectors(mq: &BandMatrix, psi_q: &DMatrix<f64>, w: &DMatrix<f64>) -> CostVectors {
    let mw = mq.mul_dense(w);
    let r1 = psi_q.transpose() * &mw;
    let r2 = (0..w.ncols()).map(|k| w.column(k).dot(&mw.column(k))).collect();
    CostVectors { r1, r2 }
}
