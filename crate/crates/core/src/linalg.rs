//! Small dense complex linear algebra.
//!
//! The matrices handled here are pilot-sized (B x B, B at most a few tens), so
//! a row-major `Vec` with straightforward loops is all that is needed. The one
//! large product in the Monte Carlo engine goes through [`gemm`].

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `x^H A y`.
    pub fn sesquilinear(&self, x: &[C64], y: &[C64]) -> C64 {
        assert_eq!(self.rows, x.len());
        assert_eq!(self.cols, y.len());
        let mut acc = C64::new(0.0, 0.0);
        for (i, xi) in x.iter().enumerate() {
            let row: C64 = self.row(i).iter().zip(y).map(|(a, b)| a * b).sum();
            acc += xi.conj() * row;
        }
        acc
    }

    pub fn scaled(&self, s: f64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, other: &CMat, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn add_diagonal(&mut self, s: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..=i).all(|j| (self[(i, j)] - self[(j, i)].conj()).norm() <= tol))
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `A = L L^H` for Hermitian positive definite `A`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    pub fn new(a: &CMat) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::NotPositiveDefinite);
        }
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)].conj() * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> CMat {
        let n = self.dim();
        let mut inv = CMat::zeros(n, n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            e[j] = C64::new(1.0, 0.0);
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // Symmetrize away rounding asymmetry.
        for i in 0..n {
            inv[(i, i)] = C64::new(inv[(i, i)].re, 0.0);
            for j in 0..i {
                let avg = 0.5 * (inv[(i, j)] + inv[(j, i)].conj());
                inv[(i, j)] = avg;
                inv[(j, i)] = avg.conj();
            }
        }
        inv
    }
}

/// LU factorization with partial pivoting, for the non-Hermitian B x B systems
/// of the low-rank MMSE update.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: CMat,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &CMat) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Singular);
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmax > 0.0) {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= f * u;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[(i, k)];
                x[i] = x[i] - l * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu[(i, k)];
                x[i] = x[i] - u * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Strided view of a dense matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub struct Strided {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Strided {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn col_major(rows: usize, cols: usize, leading: usize) -> Self {
        Self { rows, cols, row_stride: 1, col_stride: leading }
    }

    fn required_len(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// `C <- A B + beta C` for complex matrices, backed by `matrixmultiply::zgemm`.
pub fn gemm(a: &[C64], sa: Strided, b: &[C64], sb: Strided, beta: f64, c: &mut [C64], sc: Strided) {
    assert_eq!(sa.cols, sb.rows, "inner dimensions differ");
    assert_eq!((sa.rows, sb.cols), (sc.rows, sc.cols), "output shape differs");
    assert!(a.len() >= sa.required_len());
    assert!(b.len() >= sb.required_len());
    assert!(c.len() >= sc.required_len());
    if sc.rows == 0 || sc.cols == 0 {
        return;
    }
    // Row/column stride pairs of distinct elements must not alias in C.
    assert!(sc.rows == 1 || sc.cols == 1 || sc.row_stride != sc.col_stride);
    // SAFETY: `Complex<f64>` is `#[repr(C)]` with layout `[f64; 2]`; the
    // assertions above keep every strided access inside the three slices, and
    // `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            sa.rows,
            sa.cols,
            sb.cols,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            sa.row_stride as isize,
            sa.col_stride as isize,
            b.as_ptr() as *const [f64; 2],
            sb.row_stride as isize,
            sb.col_stride as isize,
            [beta, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            sc.row_stride as isize,
            sc.col_stride as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_hpd(n: usize, seed: &[f64]) -> CMat {
        let g = CMat::from_fn(n, n, |i, j| {
            let k = (i * n + j) % seed.len();
            c(seed[k], seed[(k + 1) % seed.len()] - 0.3)
        });
        let mut a = g.matmul(&g.adjoint());
        a.add_diagonal(0.5);
        a
    }

    #[test]
    fn cholesky_inverse_of_known_matrix() {
        let a = CMat::from_row_major(2, 2, vec![c(4.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]);
        let inv = Cholesky::new(&a).unwrap().inverse();
        let prod = a.matmul(&inv);
        assert!(prod.max_abs_diff(&CMat::identity(2)) < 1e-14);
        // det = 12 - 2 = 10
        assert!((inv[(0, 0)] - c(0.3, 0.0)).norm() < 1e-15);
        assert!((inv[(0, 1)] - c(-0.1, -0.1)).norm() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CMat::from_row_major(2, 2, vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn lu_needs_pivoting() {
        let a = CMat::from_row_major(2, 2, vec![c(0.0, 0.0), c(1.0, 0.0), c(2.0, 1.0), c(3.0, 0.0)]);
        let x = Lu::new(&a).unwrap().solve(&[c(1.0, 0.0), c(0.0, 1.0)]);
        let back = a.matvec(&x);
        assert!((back[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((back[1] - c(0.0, 1.0)).norm() < 1e-15);
        let singular = CMat::zeros(2, 2);
        assert!(matches!(Lu::new(&singular), Err(Error::Singular)));
    }

    #[test]
    fn gemm_matches_naive_with_strides() {
        // A: 3x4 row-major; B: 4x5 stored column-major inside a taller buffer.
        let a = CMat::from_fn(3, 4, |i, j| c(i as f64 + 0.5, j as f64 - 1.0));
        let lead = 7;
        let mut bbuf = vec![c(0.0, 0.0); lead * 5];
        let bmat = CMat::from_fn(4, 5, |i, j| c((i * j) as f64 * 0.1, 1.0 - i as f64));
        for j in 0..5 {
            for i in 0..4 {
                bbuf[j * lead + i] = bmat[(i, j)];
            }
        }
        let mut out = vec![c(1.0, 1.0); 15];
        gemm(
            a.as_slice(),
            Strided::row_major(3, 4),
            &bbuf,
            Strided::col_major(4, 5, lead),
            0.0,
            &mut out,
            Strided::row_major(3, 5),
        );
        let expected = a.matmul(&bmat);
        assert!(CMat::from_row_major(3, 5, out).max_abs_diff(&expected) < 1e-12);
    }

    proptest! {
        #[test]
        fn cholesky_solves_hpd_systems(n in 1usize..7, seed in prop::collection::vec(-1.0f64..1.0, 5..20)) {
            let a = random_hpd(n, &seed);
            let chol = Cholesky::new(&a).unwrap();
            let b: Vec<C64> = (0..n).map(|i| c(i as f64, 1.0)).collect();
            let x = chol.solve(&b);
            let r = a.matvec(&x);
            for (ri, bi) in r.iter().zip(&b) {
                prop_assert!((ri - bi).norm() < 1e-9 * (1.0 + bi.norm()));
            }
            let lu = Lu::new(&a).unwrap().solve(&b);
            for (u, v) in lu.iter().zip(&x) {
                prop_assert!((u - v).norm() < 1e-8 * (1.0 + v.norm()));
            }
            prop_assert!(chol.inverse().is_hermitian(0.0));
        }
    }
}
