//! Banded storage for the finite-element operators and a banded LU with
//! partial pivoting for the full-order Newton systems, plus a few dense
//! helpers for Gram-weighted orthogonalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals, row-major band storage.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics when `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Column range `[lo, hi)` of the band in row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.kl), (i + self.ku + 1).min(self.n))
    }

    pub fn mul_slice(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.row_range(i);
            let mut s = 0.0;
            for j in lo..hi {
                s += self.data[self.idx(i, j)] * x[j];
            }
            *o = s;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        self.mul_slice(x.as_slice(), out.as_mut_slice());
        out
    }

    /// `self * x` for a dense block of columns.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            for i in 0..self.n {
                let (lo, hi) = self.row_range(i);
                let mut s = 0.0;
                for j in lo..hi {
                    s += self.data[self.idx(i, j)] * col[j];
                }
                out[(i, c)] = s;
            }
        }
        out
    }

    /// `aᵀ · self · b` for dense blocks (a Galerkin projection when `a == b`).
    pub fn project(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.transpose() * self.mul_dense(b)
    }

    pub fn quad_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(y))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                m[(i, j)] = self.data[self.idx(i, j)];
            }
        }
        m
    }

    /// Principal submatrix obtained by dropping the first `skip` rows and columns.
    pub fn trailing(&self, skip: usize) -> BandMatrix {
        let n = self.n - skip;
        let mut out = BandMatrix::zeros(n, self.kl, self.ku);
        for i in 0..n {
            let (lo, hi) = out.row_range(i);
            for j in lo..hi {
                let k = out.idx(i, j);
                out.data[k] = self.get(i + skip, j + skip);
            }
        }
        out
    }

    /// `alpha * self + beta * other` for matrices of identical shape.
    pub fn lincomb(&self, alpha: f64, other: &BandMatrix, beta: f64) -> BandMatrix {
        assert_eq!((self.n, self.kl, self.ku), (other.n, other.kl, other.ku));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        BandMatrix { n: self.n, kl: self.kl, ku: self.ku, data }
    }

    /// Largest absolute asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (lo, hi) = self.row_range(i);
                (lo..hi).map(|j| self.data[self.idx(i, j)]).sum()
            })
            .collect()
    }
}

/// LU factorization with partial pivoting of a banded matrix, LAPACK `gbtrf` layout.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + j * self.ldab
    }

    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandLu { n, kl, ku, ldab, ab: vec![0.0; ldab * n], ipiv: vec![0; n] };
        for i in 0..n {
            let (lo, hi) = a.row_range(i);
            for j in lo..hi {
                let k = lu.at(i, j);
                lu.ab[k] = a.get(i, j);
            }
        }

        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = lu.ab[lu.at(j, j)].abs();
            for r in 1..=km {
                let v = lu.ab[lu.at(j + r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            lu.ipiv[j] = j + p;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { pivot: j });
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let (x, y) = (lu.at(j, c), lu.at(j + p, c));
                    lu.ab.swap(x, y);
                }
            }
            let piv = lu.ab[lu.at(j, j)];
            for r in 1..=km {
                let k = lu.at(j + r, j);
                lu.ab[k] /= piv;
            }
            for c in (j + 1)..=ju {
                let ujc = lu.ab[lu.at(j, c)];
                if ujc == 0.0 {
                    continue;
                }
                for r in 1..=km {
                    let l = lu.ab[lu.at(j + r, j)];
                    let k = lu.at(j + r, c);
                    lu.ab[k] -= l * ujc;
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for r in 1..=km {
                    b[j + r] -= self.ab[self.at(j + r, j)] * bj;
                }
            }
        }
        let bw = self.kl + self.ku;
        for j in (0..n).rev() {
            b[j] /= self.ab[self.at(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(bw)..j {
                b[i] -= self.ab[self.at(i, j)] * bj;
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// Gram-weighted inner-product helper around a banded SPD matrix.
#[derive(Debug, Clone, Copy)]
pub struct Weighted<'a>(pub &'a BandMatrix);

impl Weighted<'_> {
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.0.quad_form(a, b)
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// Removes from each column of `x` its weighted projection onto the
    /// (weighted-orthonormal) columns of `basis`. Two passes of classical
    /// Gram-Schmidt for numerical orthogonality.
    pub fn project_out(&self, x: &DMatrix<f64>, basis: &DMatrix<f64>) -> DMatrix<f64> {
        if basis.ncols() == 0 {
            return x.clone();
        }
        let mut r = x.clone();
        let wb = self.0.mul_dense(basis);
        for _ in 0..2 {
            let coeff = wb.transpose() * &r;
            r -= basis * coeff;
        }
        r
    }
}

/// Dense LU solve; maps singularity to [`Error::Singular`].
pub fn dense_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.lu();
    lu.solve(b).ok_or(Error::Singular { pivot: 0 })
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            let (lo, hi) = a.row_range(i);
            for j in lo..hi {
                a.set(i, j, next());
            }
        }
        a
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        for (kl, ku) in [(1, 1), (3, 3), (2, 0), (0, 2), (5, 5)] {
            let a = random_band(40, kl, ku, 7 + kl as u64 * 13 + ku as u64);
            let b = DVector::from_fn(40, |i, _| (i as f64).sin());
            let x = BandLu::factor(&a).unwrap().solve(&b);
            let d = a.to_dense();
            let r = (&d * &x - &b).amax() / (d.amax() * x.amax());
            assert!(r < 1e-13, "relative residual {r} for kl={kl} ku={ku}");
        }
    }

    #[test]
    fn band_lu_needs_pivoting() {
        // zero leading pivot forces a row swap
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.set(0, 0, 0.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(1, 2, 2.0);
        a.set(2, 1, 3.0);
        a.set(2, 2, 1.0);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = BandLu::factor(&a).unwrap().solve(&b);
        assert!((a.to_dense() * x - b).amax() < 1e-14);
    }

    #[test]
    fn singular_band_is_reported() {
        let a = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(BandLu::factor(&a), Err(Error::Singular { pivot: 0 })));
    }

    #[test]
    fn trailing_drops_leading_dof() {
        let a = random_band(6, 2, 2, 3);
        let t = a.trailing(1);
        assert_eq!(t.dim(), 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(t.get(i, j), a.get(i + 1, j + 1));
            }
        }
    }
}
