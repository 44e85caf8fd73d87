//! Uniform 1D mesh, P1/P2 Lagrange spaces and assembly of the
//! parameter-independent operators.
//!
//! `V` carries all nodes `0..=n`; `V0` drops the Dirichlet node at `x = 0`, so
//! index `i` of a `V0` vector refers to node `i + 1`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};
use crate::problem::ProblemDefinition;

/// Lagrange finite-element space on a uniform partition of `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeSpace {
    pub length: f64,
    pub n_cells: usize,
    pub order: usize,
    pub nodes: Vec<f64>,
}

impl FeSpace {
    pub fn h(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    /// Number of basis functions of `V` (`n + 1`).
    pub fn dim_v(&self) -> usize {
        self.nodes.len()
    }

    /// Number of basis functions of `V0` (`n`).
    pub fn dim_v0(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Global dof indices of the local basis functions of `cell`.
    pub fn cell_dofs(&self, cell: usize) -> std::ops::RangeInclusive<usize> {
        self.order * cell..=self.order * (cell + 1)
    }

    /// Evaluates the finite-element function with coefficients `coef` at `x`.
    pub fn eval(&self, coef: &[f64], x: f64) -> f64 {
        assert_eq!(coef.len(), self.dim_v());
        let h = self.h();
        let cell = ((x / h).floor() as isize).clamp(0, self.n_cells as isize - 1) as usize;
        let xi = (x - cell as f64 * h) / h;
        let (phi, _) = shape(self.order, xi);
        self.cell_dofs(cell).zip(phi.iter()).map(|(d, p)| coef[d] * p).sum()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.dim_v(), self.nodes.iter().map(|&x| f(x)))
    }
}

pub fn build_space(problem: &ProblemDefinition, n_cells: usize, order: usize) -> Result<FeSpace> {
    if n_cells < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 cells, got {n_cells}")));
    }
    if order != 1 && order != 2 {
        return Err(Error::InvalidInput(format!("element order must be 1 or 2, got {order}")));
    }
    problem.validate()?;
    let dim = order * n_cells + 1;
    let step = problem.length / (dim - 1) as f64;
    let mut nodes: Vec<f64> = (0..dim).map(|i| i as f64 * step).collect();
    nodes[dim - 1] = problem.length;
    Ok(FeSpace { length: problem.length, n_cells, order, nodes })
}

/// Gauss-Legendre points and weights on `[0, 1]`.
fn gauss(npts: usize) -> (Vec<f64>, Vec<f64>) {
    match npts {
        2 => {
            let d = 0.5 / 3f64.sqrt();
            (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
        }
        3 => {
            let d = 0.5 * 0.6f64.sqrt();
            (vec![0.5 - d, 0.5, 0.5 + d], vec![5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0])
        }
        _ => unreachable!("quadrature with {npts} points"),
    }
}

/// Reference shape functions and their derivatives on `[0, 1]`.
fn shape(order: usize, xi: f64) -> (Vec<f64>, Vec<f64>) {
    match order {
        1 => (vec![1.0 - xi, xi], vec![-1.0, 1.0]),
        2 => (
            vec![2.0 * (xi - 0.5) * (xi - 1.0), -4.0 * xi * (xi - 1.0), 2.0 * xi * (xi - 0.5)],
            vec![4.0 * xi - 3.0, 4.0 - 8.0 * xi, 4.0 * xi - 1.0],
        ),
        _ => unreachable!("order {order}"),
    }
}

/// Parameter-independent matrices of the semi-discrete system.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    /// Mass matrix on `V`.
    pub my: BandMatrix,
    /// `kappa1`-weighted stiffness on `V`.
    pub a1: BandMatrix,
    /// Mass matrix on `V0`.
    pub mq: BandMatrix,
    /// `kappa2`-weighted stiffness on `V0`.
    pub a2: BandMatrix,
    /// Plain stiffness on `V`.
    pub stiffness: BandMatrix,
    /// Gram matrix of the `V` inner product.
    pub sy: BandMatrix,
    /// Gram matrix of the `V0` inner product.
    pub sq: BandMatrix,
    /// `V0` index of the dof at `x = L`.
    pub boundary_index: usize,
}

impl AssembledOperators {
    pub fn dim_v(&self) -> usize {
        self.my.dim()
    }

    pub fn dim_v0(&self) -> usize {
        self.mq.dim()
    }
}

pub fn assemble(problem: &ProblemDefinition, space: &FeSpace) -> Result<AssembledOperators> {
    let p = space.order;
    let dim = space.dim_v();
    let h = space.h();
    let (qx, qw) = gauss(p + 1);
    let shapes: Vec<_> = qx.iter().map(|&xi| shape(p, xi)).collect();

    let mut my = BandMatrix::zeros(dim, p, p);
    let mut a1 = BandMatrix::zeros(dim, p, p);
    let mut a2 = BandMatrix::zeros(dim, p, p);
    let mut k = BandMatrix::zeros(dim, p, p);

    for cell in 0..space.n_cells {
        let x0 = cell as f64 * h;
        let dofs: Vec<usize> = space.cell_dofs(cell).collect();
        for (g, &xi) in qx.iter().enumerate() {
            let x = x0 + xi * h;
            let k1 = problem.kappa1.eval(x);
            let k2 = problem.kappa2.eval(x);
            if !(k1 > 0.0) {
                return Err(Error::NonPositiveCoefficient { name: "kappa1", x, value: k1 });
            }
            if !(k2 > 0.0) {
                return Err(Error::NonPositiveCoefficient { name: "kappa2", x, value: k2 });
            }
            let (phi, dphi) = &shapes[g];
            let w = qw[g] * h;
            for a in 0..=p {
                for b in 0..=p {
                    let grad = w * (dphi[a] * dphi[b]) / (h * h);
                    my.add(dofs[a], dofs[b], w * (phi[a] * phi[b]));
                    k.add(dofs[a], dofs[b], grad);
                    a1.add(dofs[a], dofs[b], k1 * grad);
                    a2.add(dofs[a], dofs[b], k2 * grad);
                }
            }
        }
    }

    let sy = my.lincomb(1.0, &k, 1.0);
    Ok(AssembledOperators {
        mq: my.trailing(1),
        a2: a2.trailing(1),
        sq: k.trailing(1),
        sy,
        my,
        a1,
        stiffness: k,
        boundary_index: dim - 2,
    })
}

/// `L2` projection of the initial state onto `V`.
pub fn project_initial(problem: &ProblemDefinition, space: &FeSpace, ops: &AssembledOperators) -> Result<DVector<f64>> {
    for &x in &space.nodes {
        let v = problem.y_init.eval(x);
        if !(v > 0.0) {
            return Err(Error::NonPositiveCoefficient { name: "y_init", x, value: v });
        }
    }
    let load = load_vector(space, |x| problem.y_init.eval(x));
    let lu = BandLu::factor(&ops.my)?;
    Ok(lu.solve(&load))
}

/// `(g, phi_i)` for all basis functions of `V`, same quadrature as the mass matrix.
pub fn load_vector(space: &FeSpace, g: impl Fn(f64) -> f64) -> DVector<f64> {
    let p = space.order;
    let h = space.h();
    let (qx, qw) = gauss(p + 1);
    let mut out = DVector::zeros(space.dim_v());
    for cell in 0..space.n_cells {
        let x0 = cell as f64 * h;
        for (&xi, &w) in qx.iter().zip(&qw) {
            let (phi, _) = shape(p, xi);
            let gv = g(x0 + xi * h) * w * h;
            for (a, d) in space.cell_dofs(cell).enumerate() {
                out[d] += gv * phi[a];
            }
        }
    }
    out
}

/// Boundary functional `<b(t), phi_i> = u(t) phi_i(L)` on `V0`.
pub fn boundary_vector(problem: &ProblemDefinition, ops: &AssembledOperators, t: f64) -> DVector<f64> {
    let mut b = DVector::zeros(ops.dim_v0());
    b[ops.boundary_index] = problem.input.eval(t);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{InputSignal, ScalarField};

    fn unit() -> ProblemDefinition {
        ProblemDefinition::standard(InputSignal::u1(), 1.0)
    }

    #[test]
    fn dims() {
        let p = unit();
        assert_eq!(build_space(&p, 200, 1).unwrap().dim_v(), 201);
        assert_eq!(build_space(&p, 200, 2).unwrap().dim_v(), 401);
        assert_eq!(build_space(&p, 2, 1).unwrap().nodes, vec![0.0, 0.5, 1.0]);
        assert!(build_space(&p, 10, 3).is_err());
        assert!(build_space(&p, 1, 1).is_err());
    }

    #[test]
    fn p1_stencils() {
        let p = unit();
        let s = build_space(&p, 10, 1).unwrap();
        let ops = assemble(&p, &s).unwrap();
        let h = 0.1;
        for (j, want) in [(4, -1.0 / h), (5, 2.0 / h), (6, -1.0 / h)] {
            assert!((ops.a1.get(5, j) - want).abs() < 1e-12);
        }
        for (j, want) in [(4, h / 6.0), (5, 4.0 * h / 6.0), (6, h / 6.0)] {
            assert!((ops.my.get(5, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn structural_properties() {
        let mut p = unit();
        p.kappa1 = ScalarField::Affine { at_zero: 1.0, slope: 2.0 };
        for order in [1, 2] {
            let s = build_space(&p, 8, order).unwrap();
            let ops = assemble(&p, &s).unwrap();
            for m in [&ops.my, &ops.a1, &ops.mq, &ops.a2, &ops.sy, &ops.sq, &ops.stiffness] {
                assert_eq!(m.asymmetry(), 0.0);
            }
            assert!(ops.a1.row_sums().iter().all(|r| r.abs() < 1e-12));
            assert!(ops.stiffness.row_sums().iter().all(|r| r.abs() < 1e-12));
            for m in [&ops.my, &ops.mq, &ops.sy, &ops.sq] {
                assert!(BandLu::factor(m).is_ok());
            }
            assert_eq!(ops.sq, ops.stiffness.trailing(1));
        }
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        let mut p = unit();
        p.kappa2 = ScalarField::Affine { at_zero: 1.0, slope: -2.0 };
        let s = build_space(&p, 8, 1).unwrap();
        assert!(matches!(assemble(&p, &s), Err(Error::NonPositiveCoefficient { name: "kappa2", .. })));
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let mut p = unit();
        let s = build_space(&p, 7, 1).unwrap();
        let ops = assemble(&p, &s).unwrap();
        let y = project_initial(&p, &s, &ops).unwrap();
        assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-12));

        p.y_init = ScalarField::Affine { at_zero: 1.0, slope: 1.0 };
        let y = project_initial(&p, &s, &ops).unwrap();
        for (v, x) in y.iter().zip(&s.nodes) {
            assert!((v - (1.0 + x)).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_functional() {
        let p = ProblemDefinition::standard(InputSignal::u2(), 1.0);
        let s = build_space(&p, 4, 1).unwrap();
        let ops = assemble(&p, &s).unwrap();
        let b = boundary_vector(&p, &ops, 0.5);
        assert_eq!(b.len(), 4);
        assert_eq!(b[3], -1.0);
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 1);
    }
}
