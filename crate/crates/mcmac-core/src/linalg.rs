//! Minimal dense complex linear algebra for small Hermitian systems.
//!
//! Every matrix in this crate is at most `ap_antennas` square (a few tens
//! of rows), so a compact row-major store with an unblocked Cholesky
//! factorization is both sufficient and easy to audit. The factorization
//! is the only decomposition used: log-determinants and inverse quadratic
//! forms of `R + sum(e * H * H^H)` matrices are read off the factor.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Build from a row-major closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat { rows, cols, data }
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        CMat::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }

    /// Column `j` as a vector.
    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `self += scale * x * x^H` for a column vector `x`.
    pub fn add_scaled_outer(&mut self, x: &[C64], scale: f64) {
        debug_assert_eq!(self.rows, x.len());
        debug_assert_eq!(self.rows, self.cols);
        if scale == 0.0 {
            return;
        }
        let n = self.rows;
        for i in 0..n {
            let xi = x[i];
            for j in 0..n {
                *self.at_mut(i, j) += xi * x[j].conj() * scale;
            }
        }
    }

    /// `self += scale * G * G^H` where `G` has the same row count as `self`.
    ///
    /// Used to accumulate per-user signal covariance terms into a
    /// Hermitian interference-plus-noise matrix.
    pub fn add_scaled_gram(&mut self, g: &CMat, scale: f64) {
        debug_assert_eq!(self.rows, g.rows);
        debug_assert_eq!(self.rows, self.cols);
        if scale == 0.0 {
            return;
        }
        let n = self.rows;
        for c in 0..g.cols {
            for i in 0..n {
                let gi = g.at(i, c);
                for j in 0..n {
                    let gj = g.at(j, c);
                    *self.at_mut(i, j) += gi * gj.conj() * scale;
                }
            }
        }
    }

    /// Cholesky factorization `A = L * L^H` of a Hermitian positive
    /// definite matrix. Returns the lower-triangular factor; entries above
    /// the diagonal of the result are zero.
    pub fn cholesky(&self) -> Result<CMat> {
        debug_assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut diag = self.at(j, j).re;
            for k in 0..j {
                diag -= l.at(j, k).norm_sqr();
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Domain(alloc::format!(
                    "matrix not positive definite (pivot {diag:.3e} at row {j})"
                )));
            }
            let ljj = diag.sqrt();
            *l.at_mut(j, j) = C64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s -= l.at(i, k) * l.at(j, k).conj();
                }
                *l.at_mut(i, j) = s / ljj;
            }
        }
        Ok(l)
    }

    /// `log2(det(A))` computed from the Cholesky factor of `A`.
    pub fn log2_det_from_chol(l: &CMat) -> f64 {
        let mut acc = 0.0;
        for i in 0..l.rows {
            acc += l.at(i, i).re.log2();
        }
        2.0 * acc
    }

    /// Forward substitution `L y = x` for a lower-triangular `self`.
    pub fn forward_solve(&self, x: &[C64]) -> Vec<C64> {
        let n = self.rows;
        debug_assert_eq!(x.len(), n);
        let mut y = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s / self.at(i, i).re;
        }
        y
    }

    /// `x^H * A^{-1} * x` from the Cholesky factor `L` of `A`, i.e. the
    /// squared norm of the forward-substitution solve `L y = x`.
    pub fn inv_quad_form(l: &CMat, x: &[C64]) -> f64 {
        let n = l.rows;
        debug_assert_eq!(x.len(), n);
        let mut y = vec![C64::new(0.0, 0.0); n];
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= l.at(i, j) * y[j];
            }
            let yi = s / l.at(i, i).re;
            acc += yi.norm_sqr();
            y[i] = yi;
        }
        acc
    }
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self.at(i, j);
                write!(f, "{:+.4e}{:+.4e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}
