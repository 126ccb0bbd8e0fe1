use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix backed by a flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "buffer of {} elements cannot be a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("matrix needs at least one row".to_string()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Stacks the rows of `self` and `other` (same column count).
    pub fn vstack(&self, other: &Mat<F>) -> Result<Mat<F>> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "vstack of {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Mat {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat<F> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Mat<F> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Mat<F> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// `self * other`, (m x n) * (n x p) -> (m x p).
    pub fn matmul(&self, other: &Mat<F>) -> Result<Mat<F>> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (l, &a) in a_row.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                let b_row = other.row(l);
                for (j, &b) in b_row.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`, (m x n) * (p x n)^T -> (m x p).
    ///
    /// Row-major friendly form used for projections (samples * R^T).
    pub fn matmul_transpose(&self, other: &Mat<F>) -> Result<Mat<F>> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_transpose {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for j in 0..other.rows {
                out_row[j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn scale_in_place(&mut self, s: F) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm_sq<F: Scalar>(a: &[F]) -> F {
    dot(a, a)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Returns the lower-triangular factor L with A = L L^T, or a singularity
/// error when a pivot falls at or below `n * eps * max_diag` (rank-deficient
/// or indefinite input). No regularization is ever applied.
pub fn cholesky<F: Scalar>(a: &Mat<F>) -> Result<Mat<F>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut max_diag = F::zero();
    for i in 0..n {
        let v = a.get(i, i).abs();
        if v > max_diag {
            max_diag = v;
        }
    }
    let tol = max_diag * F::epsilon() * F::cast(n as f64);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut s = a.get(j, j);
        for t in 0..j {
            let v = l.get(j, t);
            s -= v * v;
        }
        if !s.is_finite() || s <= tol {
            return Err(Error::Singular(format!(
                "cholesky pivot {s} at column {j} (tolerance {tol})"
            )));
        }
        let piv = s.sqrt();
        l.set(j, j, piv);
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for t in 0..j {
                v -= l.get(i, t) * l.get(j, t);
            }
            l.set(i, j, v / piv);
        }
    }
    Ok(l)
}

/// Solves A x = b given the lower-triangular factor L of A = L L^T
/// (as returned by `cholesky`), so one factorization serves many
/// right-hand sides.
pub fn cholesky_solve<F: Scalar>(l: &Mat<F>, b: &[F]) -> Result<Vec<F>> {
    let n = l.rows();
    if b.len() != n {
        return Err(Error::shape(format!(
            "rhs of length {} for a {n}x{n} system",
            b.len()
        )));
    }
    // forward: L y = b
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l.get(i, j) * y[j];
        }
        y[i] = s / l.get(i, i);
    }
    // backward: L^T x = y
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= l.get(j, i) * x[j];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m64(rows: &[Vec<f64>]) -> Mat<f64> {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let a = m64(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = m64(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.row(0), &[19.0, 22.0]);
        assert_eq!(c.row(1), &[43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_matches_explicit_transpose() {
        let a = m64(&[vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0]]);
        let b = m64(&[vec![2.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]]);
        let via_t = a.matmul(&b.transpose()).unwrap();
        let direct = a.matmul_transpose(&b).unwrap();
        assert_eq!(via_t, direct);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = m64(&[vec![1.0, 2.0]]);
        assert!(a.matmul(&m64(&[vec![1.0, 2.0]])).is_err());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        // A = [[4,2],[2,3]], b = [1, 2] -> x = [-1/8, 3/4]
        let a = m64(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let l = cholesky(&a).unwrap();
        // L = [[2,0],[1,sqrt(2)]]
        assert!((l.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((l.get(1, 1) - 2.0f64.sqrt()).abs() < 1e-12);
        let x = cholesky_solve(&l, &[1.0, 2.0]).unwrap();
        assert!((x[0] + 0.125).abs() < 1e-12);
        assert!((x[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = m64(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(cholesky(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn cholesky_works_in_f32() {
        let a = Mat::<f32>::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[1.0f32, 2.0]).unwrap();
        assert!((x[0] + 0.125).abs() < 1e-5);
        assert!((x[1] - 0.75).abs() < 1e-5);
    }
}
