//! Small dense row-major matrices and a Cholesky factorization with an
//! explicit pivot tolerance.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inner product with four independent accumulators, which lets the
/// compiler vectorize the loop.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(k) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::usage(format!(
                "row {k} has {} entries, expected {cols}",
                rows[k].len()
            )));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on zero width
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::usage(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest `|a_ij - a_ji|`; square matrices only.
    pub fn asymmetry(&self) -> T {
        assert!(self.is_square());
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// A pivot is accepted only if it exceeds this fraction of the largest
/// diagonal entry of the matrix being factored. Anything smaller is treated
/// as numerically singular.
pub const PIVOT_RTOL: f64 = 1e-9;

/// Lower-triangular factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

/// Where and why a factorization stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub column: usize,
    pub pivot: f64,
    pub threshold: f64,
}

impl<T: Scalar> Cholesky<T> {
    /// Factor `a + shift * I`, reading only the lower triangle of `a`.
    pub fn factor_shifted(a: &Matrix<T>, shift: T) -> std::result::Result<Self, NotPositiveDefinite> {
        assert!(a.is_square(), "Cholesky needs a square matrix");
        let n = a.nrows();
        let max_diag = (0..n).fold(T::zero(), |m, i| m.max((a[(i, i)] + shift).abs()));
        let threshold = T::of(PIVOT_RTOL) * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let (done, rest) = l.data.split_at_mut(j * n);
            let row_j = &mut rest[..n];
            // left-looking: row j of L from rows 0..j
            for k in 0..j {
                let row_k = &done[k * n..k * n + k];
                let dot: T = row_k.iter().zip(&row_j[..k]).map(|(&x, &y)| x * y).sum();
                row_j[k] = (a[(j, k)] - dot) / done[k * n + k];
            }
            let sq: T = row_j[..j].iter().map(|&x| x * x).sum();
            let pivot = a[(j, j)] + shift - sq;
            if !(pivot > threshold) || !pivot.is_finite() {
                return Err(NotPositiveDefinite {
                    column: j,
                    pivot: pivot.as_f64(),
                    threshold: threshold.as_f64(),
                });
            }
            row_j[j] = pivot.sqrt();
        }
        Ok(Self { l })
    }

    pub fn factor(a: &Matrix<T>) -> std::result::Result<Self, NotPositiveDefinite> {
        Self::factor_shifted(a, T::zero())
    }

    pub fn l(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solve `A x = b` in place for one right-hand side.
    pub fn solve_vec_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = self.l.row(i);
            let dot: T = row[..i].iter().zip(&b[..i]).map(|(&x, &y)| x * y).sum();
            b[i] = (b[i] - dot) / row[i];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..n {
                acc = acc - self.l[(k, i)] * b[k];
            }
            b[i] = acc / self.l[(i, i)];
        }
    }

    /// Solve `A X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side has the wrong row count");
        let mut x = b.clone();
        let c = b.ncols();
        // forward: L Y = B, row by row so inner loops run along contiguous rows
        for i in 0..n {
            let l_row = self.l.row(i);
            let (done, rest) = x.data.split_at_mut(i * c);
            let xi = &mut rest[..c];
            for k in 0..i {
                let lik = l_row[k];
                if lik == T::zero() {
                    continue;
                }
                for (v, &y) in xi.iter_mut().zip(&done[k * c..(k + 1) * c]) {
                    *v = *v - lik * y;
                }
            }
            let inv = T::one() / l_row[i];
            for v in xi.iter_mut() {
                *v = *v * inv;
            }
        }
        // backward: L^T X = Y
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * c);
            let xi = &mut head[i * c..];
            for k in i + 1..n {
                let lki = self.l[(k, i)];
                if lki == T::zero() {
                    continue;
                }
                let xk = &tail[(k - i - 1) * c..(k - i) * c];
                for (v, &y) in xi.iter_mut().zip(xk) {
                    *v = *v - lki * y;
                }
            }
            let inv = T::one() / self.l[(i, i)];
            for v in xi.iter_mut() {
                *v = *v * inv;
            }
        }
        x
    }

    /// `L^{-1} B`, the half-solve used for quadratic forms.
    pub fn forward_solve(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        let c = b.ncols();
        let mut x = b.clone();
        for i in 0..n {
            let l_row = self.l.row(i);
            let (done, rest) = x.data.split_at_mut(i * c);
            let xi = &mut rest[..c];
            for k in 0..i {
                let lik = l_row[k];
                for (v, &y) in xi.iter_mut().zip(&done[k * c..(k + 1) * c]) {
                    *v = *v - lik * y;
                }
            }
            let inv = T::one() / l_row[i];
            for v in xi.iter_mut() {
                *v = *v * inv;
            }
        }
        x
    }
}
