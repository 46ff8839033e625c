//! Small dense complex matrices.
//!
//! Channel matrices here are at most 8×8, so a row-major `Vec` is all we need.
//! Indices are zero-based; the one-based node numbering used elsewhere lives in
//! the callers.

use num_complex::Complex64;
use std::ops::Mul;

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "row-major data has the wrong length"
        );
        Self { rows, cols, data }
    }

    pub fn diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| {
            if i == j {
                diag[i]
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(
            x.len(),
            self.cols,
            "dimension mismatch in matrix-vector product"
        );
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Squared Euclidean norm of row `i`.
    pub fn row_norm_sqr(&self, i: usize) -> f64 {
        self.row(i).iter().map(|z| z.norm_sqr()).sum()
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch in matrix product");
        CMatrix::from_fn(self.rows, rhs.cols, |i, j| {
            (0..self.cols).map(|k| self.get(i, k) * rhs.get(k, j)).sum()
        })
    }
}

/// LU factorisation with partial pivoting.
///
/// Pivot choice is the largest magnitude in the column, ties broken by the
/// lowest row index, so identical inputs always factor identically.
#[derive(Debug, Clone)]
pub struct LuDecomposition {
    lu: CMatrix,
    perm: Vec<usize>,
}

impl LuDecomposition {
    /// Returns `None` when a pivot falls to `pivot_floor` or below.
    pub fn factor(a: &CMatrix, pivot_floor: f64) -> Option<Self> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut best = k;
            let mut best_mag = lu.get(k, k).norm();
            for i in k + 1..n {
                let mag = lu.get(i, k).norm();
                if mag > best_mag {
                    best = i;
                    best_mag = mag;
                }
            }
            if best_mag <= pivot_floor {
                return None;
            }
            if best != k {
                for j in 0..n {
                    let tmp = lu.get(k, j);
                    lu.set(k, j, lu.get(best, j));
                    lu.set(best, j, tmp);
                }
                perm.swap(k, best);
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let factor = lu.get(i, k) / pivot;
                lu.set(i, k, factor);
                for j in k + 1..n {
                    let v = lu.get(i, j) - factor * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n, "right-hand side has the wrong length");
        let mut y: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let v = y[i] - self.lu.get(i, j) * y[j];
                y[i] = v;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let v = y[i] - self.lu.get(i, j) * y[j];
                y[i] = v;
            }
            y[i] /= self.lu.get(i, i);
        }
        y
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.lu.rows;
        let mut inv = CMatrix::zeros(n, n);
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            e[j] = Complex64::new(1.0, 0.0);
            for (i, v) in self.solve(&e).into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_product_is_noop() {
        let a = CMatrix::from_row_major(
            2,
            2,
            vec![c(1.0, 2.0), c(0.0, -1.0), c(3.0, 0.0), c(0.5, 0.5)],
        );
        assert_eq!(&CMatrix::identity(2) * &a, a);
        assert_eq!(&a * &CMatrix::identity(2), a);
    }

    #[test]
    fn norms() {
        let a = CMatrix::from_row_major(
            2,
            2,
            vec![c(3.0, 4.0), c(0.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)],
        );
        assert_eq!(a.row_norm_sqr(0), 25.0);
        assert_eq!(a.norm_one(), 6.0);
        assert_eq!(a.max_abs(), 5.0);
    }

    #[test]
    fn lu_solves_and_inverts() {
        // needs a row swap on the first column
        let a = CMatrix::from_row_major(
            3,
            3,
            vec![
                c(0.0, 0.0),
                c(1.0, 1.0),
                c(2.0, 0.0),
                c(3.0, -1.0),
                c(0.5, 0.0),
                c(0.0, 2.0),
                c(1.0, 0.0),
                c(0.0, -1.0),
                c(1.0, 1.0),
            ],
        );
        let lu = LuDecomposition::factor(&a, 1e-12).unwrap();
        let x = vec![c(1.0, -2.0), c(0.25, 0.0), c(-1.0, 3.0)];
        let b = a.mul_vec(&x);
        for (got, want) in lu.solve(&b).iter().zip(&x) {
            assert!((got - want).norm() < 1e-12);
        }
        let prod = &a * &lu.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - c(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = CMatrix::from_row_major(
            2,
            2,
            vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)],
        );
        assert!(LuDecomposition::factor(&a, 1e-12).is_none());
    }
}
