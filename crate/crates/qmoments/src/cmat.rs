//! Dense complex matrices, row-major storage.
//!
//! Everything downstream (partial transpose, realignment, eigensolves, k-copy
//! operators) runs on matrices of dimension at most 256, so a plain `Vec`-backed
//! dense type is all we need. Keeping the arithmetic in-crate keeps the whole
//! numeric path bit-stable: no BLAS, no platform-dependent kernels.

use num_complex::Complex64;
use std::ops::{Index, IndexMut};

pub type C64 = Complex64;

/// Complex matrix, row-major. `data[r * n_cols + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    n_rows: usize,
    n_cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CMat { n_rows, n_cols, data: vec![C64::ZERO; n_rows * n_cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::ONE;
        }
        m
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMat::zeros(n_rows, n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Build from rows of real entries (imaginary parts zero).
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = if n_rows == 0 { 0 } else { rows[0].len() };
        CMat::from_fn(n_rows, n_cols, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.n_cols, self.n_rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> CMat {
        let mut m = self.clone();
        for v in &mut m.data {
            *v = v.conj();
        }
        m
    }

    pub fn dagger(&self) -> CMat {
        CMat::from_fn(self.n_cols, self.n_rows, |r, c| self[(c, r)].conj())
    }

    pub fn add(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.n_rows, self.n_cols), (rhs.n_rows, rhs.n_cols));
        let mut m = self.clone();
        for (a, b) in m.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        m
    }

    pub fn sub(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.n_rows, self.n_cols), (rhs.n_rows, rhs.n_cols));
        let mut m = self.clone();
        for (a, b) in m.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
        m
    }

    pub fn scale(&self, s: C64) -> CMat {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= s;
        }
        m
    }

    pub fn scale_re(&self, s: f64) -> CMat {
        self.scale(C64::new(s, 0.0))
    }

    pub fn mul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.n_cols, rhs.n_rows, "dimension mismatch in matrix product");
        let (n, k, m) = (self.n_rows, self.n_cols, rhs.n_cols);
        let mut out = CMat::zeros(n, m);
        for r in 0..n {
            for t in 0..k {
                let a = self.data[r * k + t];
                if a == C64::ZERO {
                    continue;
                }
                let row_rhs = &rhs.data[t * m..(t + 1) * m];
                let row_out = &mut out.data[r * m..(r + 1) * m];
                for c in 0..m {
                    row_out[c] += a * row_rhs[c];
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.n_cols, v.len());
        (0..self.n_rows)
            .map(|r| {
                let row = &self.data[r * self.n_cols..(r + 1) * self.n_cols];
                row.iter().zip(v).map(|(a, x)| a * x).sum()
            })
            .collect()
    }

    /// Kronecker product; index convention (i ⊗ j) -> i * rhs_dim + j, row-major.
    pub fn kron(&self, rhs: &CMat) -> CMat {
        let (ar, ac, br, bc) = (self.n_rows, self.n_cols, rhs.n_rows, rhs.n_cols);
        let mut out = CMat::zeros(ar * br, ac * bc);
        for i in 0..ar {
            for j in 0..ac {
                let a = self[(i, j)];
                if a == C64::ZERO {
                    continue;
                }
                for k in 0..br {
                    for l in 0..bc {
                        out[(i * br + k, j * bc + l)] = a * rhs[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// |u><v| (outer product with conjugation on v).
    pub fn outer(u: &[C64], v: &[C64]) -> CMat {
        CMat::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square());
        (0..self.n_rows).map(|i| self[(i, i)]).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// max |M - M†| over entries; 0 for exactly Hermitian input.
    pub fn herm_deviation(&self) -> f64 {
        assert!(self.is_square());
        let mut dev: f64 = 0.0;
        for r in 0..self.n_rows {
            for c in r..self.n_cols {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    pub fn max_imag(&self) -> f64 {
        self.data.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.n_rows && c < self.n_cols);
        &self.data[r * self.n_cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.n_rows && c < self.n_cols);
        &mut self.data[r * self.n_cols + c]
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Inner product <u|v> = Σ uᵢ* vᵢ.
pub fn vdot(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(v: &[C64]) -> Vec<C64> {
    let n = vec_norm(v);
    assert!(n > 0.0, "cannot normalize a zero vector");
    v.iter().map(|x| x / n).collect()
}

/// Solve A x = b for real square A by Gaussian elimination with partial pivoting.
/// Returns None when a pivot underflows (singular to working precision).
pub fn solve_real(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_matches_hand_computation() {
        let a = CMat::from_fn(2, 2, |r, c| c64(r, c));
        fn c64(r: usize, c: usize) -> C64 {
            C64::new((r * 2 + c) as f64, 1.0)
        }
        let b = CMat::identity(2).scale(C64::new(0.0, 1.0));
        let ab = a.mul(&b);
        for r in 0..2 {
            for cidx in 0..2 {
                assert_eq!(ab[(r, cidx)], a[(r, cidx)] * C64::new(0.0, 1.0));
            }
        }
    }

    #[test]
    fn kron_mixed_product_property() {
        // (A⊗B)(C⊗D) = (AC)⊗(BD)
        let a = CMat::from_fn(2, 2, |r, c| C64::new((r + 2 * c) as f64, 0.3));
        let b = CMat::from_fn(3, 3, |r, c| C64::new(0.5 * r as f64, c as f64));
        let cm = CMat::from_fn(2, 2, |r, c| C64::new(1.0 - r as f64, 0.1 * c as f64));
        let d = CMat::from_fn(3, 3, |r, c| C64::new((r * c) as f64, -0.2));
        let lhs = a.kron(&b).mul(&cm.kron(&d));
        let rhs = a.mul(&cm).kron(&b.mul(&d));
        assert!(lhs.sub(&rhs).max_abs() < 1e-12);
    }

    #[test]
    fn dagger_and_trace() {
        let a = CMat::from_fn(3, 3, |r, c| C64::new(r as f64, c as f64));
        let ad = a.dagger();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(ad[(r, c)], a[(c, r)].conj());
            }
        }
        assert_eq!(a.trace(), C64::new(0.0 + 1.0 + 2.0, 0.0 + 1.0 + 2.0));
    }

    #[test]
    fn solve_real_roundtrip() {
        let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, -1.0], vec![0.0, -1.0, 2.0]];
        let xs = vec![1.0, -2.0, 0.5];
        let b: Vec<f64> =
            (0..3).map(|r| (0..3).map(|c| a[r][c] * xs[c]).sum()).collect();
        let sol = solve_real(&a, &b).unwrap();
        for (s, x) in sol.iter().zip(&xs) {
            assert!((s - x).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_system_returns_none() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_real(&a, &[1.0, 2.0]).is_none());
    }
}
