//! Proper orthogonal decomposition in a Gram-weighted inner product.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;

/// Relative singular-value threshold below which modes count as numerically zero.
pub const RANK_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PodRule {
    /// Exactly this many modes (fewer if the snapshots have lower rank).
    Rank(usize),
    /// Smallest `r` with `sum_{i<=r} s_i^2 >= (1 - tol) sum_i s_i^2`, at most `max` modes.
    Energy { tol: f64, max: usize },
}

#[derive(Debug, Clone)]
pub struct Pod {
    /// Modes, orthonormal in the weighted inner product.
    pub modes: DMatrix<f64>,
    /// All singular values in decreasing order.
    pub singular_values: Vec<f64>,
    /// Number of singular values above [`RANK_TOL`].
    pub rank: usize,
}

/// Cached Cholesky factor `S = L L^T` of a Gram matrix.
#[derive(Debug, Clone)]
pub struct GramFactor {
    chol: Cholesky<f64, Dyn>,
}

impl GramFactor {
    pub fn new(gram: &BandMatrix) -> Result<Self> {
        let chol = gram.to_dense().cholesky().ok_or(Error::Singular { pivot: 0 })?;
        Ok(Self { chol })
    }
}

/// Weighted POD of the columns of `snapshots`. With `gram = None` the
/// Euclidean inner product is used.
pub fn pod(snapshots: &DMatrix<f64>, gram: Option<&GramFactor>, rule: PodRule) -> Result<Pod> {
    if snapshots.ncols() == 0 || snapshots.nrows() == 0 {
        return Err(Error::InvalidInput("POD needs at least one snapshot".into()));
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite snapshot entry".into()));
    }
    let scaled = match gram {
        Some(g) => g.chol.l().transpose() * snapshots,
        None => snapshots.clone(),
    };
    let svd = scaled.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().take_while(|&&s| s > RANK_TOL * smax && s > 0.0).count();
    if rank == 0 {
        return Err(Error::RankDeficient { requested: 1, rank: 0 });
    }
    let r = match rule {
        PodRule::Rank(r) => {
            if r > rank {
                log::warn!("POD rank {r} requested but snapshots have numerical rank {rank}");
            }
            r.min(rank)
        }
        PodRule::Energy { tol, max } => {
            let total: f64 = sv.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            let mut r = 0;
            for s in &sv[..rank] {
                acc += s * s;
                r += 1;
                if acc >= (1.0 - tol) * total {
                    break;
                }
            }
            r.min(max)
        }
    };

    let mut leading = DMatrix::zeros(u.nrows(), r);
    for (c, &i) in order.iter().take(r).enumerate() {
        leading.set_column(c, &u.column(i));
    }
    let modes = match gram {
        Some(g) => g
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&leading)
            .ok_or(Error::Singular { pivot: 0 })?,
        None => leading,
    };
    Ok(Pod { modes, singular_values: sv, rank })
}

/// Replaces a snapshot set by `U_r Sigma_r` of its numerically nonzero part.
/// The POD of a union of compressed sets equals the POD of the union of the
/// originals up to the discarded energy.
pub fn compress(snapshots: &DMatrix<f64>, gram: Option<&GramFactor>) -> DMatrix<f64> {
    if snapshots.ncols() <= snapshots.nrows() / 2 {
        return snapshots.clone();
    }
    let scaled = match gram {
        Some(g) => g.chol.l().transpose() * snapshots,
        None => snapshots.clone(),
    };
    let svd = scaled.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-14 * smax)
        .collect();
    let mut out = DMatrix::zeros(u.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &(u.column(i) * svd.singular_values[i]));
    }
    match gram {
        Some(g) => g.chol.l().transpose().solve_upper_triangular(&out).expect("SPD factor"),
        None => out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn gram(n: usize) -> BandMatrix {
        let mut s = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            s.set(i, i, 3.0);
            if i + 1 < n {
                s.set(i, i + 1, -1.0);
                s.set(i + 1, i, -1.0);
            }
        }
        s
    }

    #[test]
    fn identical_snapshots_give_normalized_vector() {
        let s = gram(6);
        let g = GramFactor::new(&s).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let x = DMatrix::from_columns(&[v.clone(), v.clone(), v.clone()]);
        let p = pod(&x, Some(&g), PodRule::Rank(1)).unwrap();
        let nv = s.quad_form(&v, &v).sqrt();
        let m = p.modes.column(0).into_owned();
        let sign = m[1].signum();
        assert!((m * sign - &v / nv).amax() < 1e-12);
        assert_eq!(p.rank, 1);
    }

    #[test]
    fn energy_rule_stops_early() {
        let x = DMatrix::from_fn(5, 3, |i, j| if i == j { [1.0, 1e-3, 1e-9][j] } else { 0.0 });
        let p = pod(&x, None, PodRule::Energy { tol: 1e-10, max: 10 }).unwrap();
        assert_eq!(p.modes.ncols(), 2);
        let p = pod(&x, None, PodRule::Energy { tol: 1e-10, max: 1 }).unwrap();
        assert_eq!(p.modes.ncols(), 1);
    }

    #[test]
    fn zero_snapshots_are_rank_deficient() {
        let x = DMatrix::zeros(4, 2);
        assert!(matches!(pod(&x, None, PodRule::Rank(1)), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn compression_preserves_span() {
        let s = gram(8);
        let g = GramFactor::new(&s).unwrap();
        let x = DMatrix::from_fn(8, 20, |i, j| ((i + 1) as f64 * 0.3 * (j % 3 + 1) as f64).sin());
        let c = compress(&x, Some(&g));
        assert!(c.ncols() <= 8);
        let a = pod(&x, Some(&g), PodRule::Rank(8)).unwrap();
        let b = pod(&c, Some(&g), PodRule::Rank(8)).unwrap();
        assert_eq!(a.rank, b.rank);
        for (sa, sb) in a.singular_values.iter().zip(&b.singular_values).take(a.rank) {
            assert!((sa - sb).abs() < 1e-10 * a.singular_values[0]);
        }
    }
}
