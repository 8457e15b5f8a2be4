//! Dense matrices and the small amount of linear algebra the crate needs.
//!
//! Row-major storage, hand-rolled Cholesky and power iteration. Problem sizes
//! here are tiny (tokens are a few dozen rows, mixture systems are at most
//! library-capacity square), so clarity beats cleverness.

use crate::error::{IdeaError, Result};
use crate::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Build from a flat row-major buffer. `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IdeaError::invalid(format!(
                "matrix buffer has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in &rows {
            if row.len() != ncols {
                return Err(IdeaError::invalid("ragged rows in matrix literal"));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the last `n` rows.
    pub fn tail_rows(&self, n: usize) -> Matrix<T> {
        assert!(n <= self.rows);
        let start = (self.rows - n) * self.cols;
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[start..].to_vec(),
        }
    }

    /// Stack `top` over `bottom`; both must share the column count.
    pub fn vstack(top: &Matrix<T>, bottom: &Matrix<T>) -> Result<Matrix<T>> {
        if top.cols != bottom.cols && top.rows != 0 && bottom.rows != 0 {
            return Err(IdeaError::invalid("vstack column mismatch"));
        }
        let cols = if top.rows == 0 { bottom.cols } else { top.cols };
        let mut data = Vec::with_capacity((top.rows + bottom.rows) * cols);
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols,
            data,
        })
    }

    /// Column means over all rows.
    pub fn row_mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m = *m + *v;
            }
        }
        let inv = T::one() / T::from_count(self.rows.max(1));
        for m in mean.iter_mut() {
            *m = *m * inv;
        }
        mean
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum()
    }

    pub fn scale(&mut self, s: T) {
        for v in self.data.iter_mut() {
            *v = *v * s;
        }
    }

    /// `self += s * other`, elementwise.
    pub fn axpy(&mut self, s: T, other: &Matrix<T>) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * *b;
        }
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `w = m * v` for a square or rectangular matrix.
pub fn matvec<T: Real>(m: &Matrix<T>, v: &[T]) -> Vec<T> {
    debug_assert_eq!(m.cols(), v.len());
    (0..m.rows()).map(|i| dot(m.row(i), v)).collect()
}

/// `w = m^T * v`.
pub fn matvec_t<T: Real>(m: &Matrix<T>, v: &[T]) -> Vec<T> {
    debug_assert_eq!(m.rows(), v.len());
    let mut out = vec![T::zero(); m.cols()];
    for i in 0..m.rows() {
        let vi = v[i];
        for (o, mij) in out.iter_mut().zip(m.row(i)) {
            *o = *o + vi * *mij;
        }
    }
    out
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factor `a = L L^T`. Returns `None` when a pivot falls below the
    /// numerical-singularity threshold `n * eps * max_diag`.
    pub fn factor(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows();
        debug_assert_eq!(n, a.cols());
        let mut max_diag = T::zero();
        for i in 0..n {
            max_diag = max_diag.max(a.get(i, i).abs());
        }
        let tol = T::from_count(n.max(1)) * T::epsilon() * max_diag.max(T::one());
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if s <= tol {
                        return None;
                    }
                    l.set(j, j, s.sqrt());
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        Some(Cholesky { l })
    }

    /// Solve `a x = b` via forward and back substitution.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        debug_assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l.get(i, k);
                y[i] = y[i] - lik * y[k];
            }
            y[i] = y[i] / self.l.get(i, i);
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = self.l.get(k, i);
                y[i] = y[i] - lki * y[k];
            }
            y[i] = y[i] / self.l.get(i, i);
        }
        y
    }
}

/// Largest eigenvalue of a symmetric positive-semidefinite operator given by
/// `apply`, via power iteration with a deterministic start vector.
pub fn power_iteration<T: Real, F>(dim: usize, tol: T, max_iter: usize, apply: F) -> T
where
    F: Fn(&[T]) -> Vec<T>,
{
    if dim == 0 {
        return T::zero();
    }
    // Slightly uneven start so we are never orthogonal to the top eigenvector
    // of structured matrices.
    let mut v: Vec<T> = (0..dim)
        .map(|i| T::one() + T::from_count(i + 1) * T::real(1e-3))
        .collect();
    let inv = T::one() / norm2(&v);
    for x in v.iter_mut() {
        *x = *x * inv;
    }
    let mut lambda = T::zero();
    for _ in 0..max_iter {
        let w = apply(&v);
        let nw = norm2(&w);
        if nw == T::zero() {
            return T::zero();
        }
        let next = dot(&v, &w);
        let inv = T::one() / nw;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = *wi * inv;
        }
        if (next - lambda).abs() <= tol * next.abs().max(T::one()) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Exact Euclidean projection onto the probability simplex (sort-based).
pub fn euclidean_simplex_projection<T: Real>(v: &[T]) -> Vec<T> {
    let k = v.len();
    assert!(k > 0);
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    let mut rho = 0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum = cumsum + u;
        let candidate = (cumsum - T::one()) / T::from_count(j + 1);
        if u - candidate > T::zero() {
            rho = j + 1;
            theta = candidate;
        }
    }
    debug_assert!(rho > 0);
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        // a = [[4,2],[2,3]], well conditioned.
        let a: Matrix<f64> = Matrix::from_rows(vec![vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let chol = Cholesky::factor(&a).unwrap();
        let x = chol.solve(&[8.0, 7.0]);
        // Verify a * x = b.
        let b = matvec(&a, &x);
        assert!((b[0] - 8.0).abs() < 1e-12);
        assert!((b[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = Matrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(Cholesky::<f64>::factor(&a).is_none());
    }

    #[test]
    fn power_iteration_finds_dominant_eigenvalue() {
        let a: Matrix<f64> = Matrix::from_rows(vec![vec![3.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let lambda = power_iteration(2, 1e-12, 10_000, |v| matvec(&a, v));
        assert!((lambda - 4.0).abs() < 1e-9);
    }

    #[test]
    fn simplex_projection_known_cases() {
        let p = euclidean_simplex_projection(&[0.3f64, 0.7]);
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] - 0.7).abs() < 1e-15);

        let p = euclidean_simplex_projection(&[2.0f64, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);

        let p = euclidean_simplex_projection(&[0.0f64, 0.0, 0.0]);
        let third = 1.0 / 3.0;
        for x in p {
            assert!((x - third).abs() < 1e-15);
        }
    }

    #[test]
    fn matvec_t_matches_transpose() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let out = matvec_t(&m, &[1.0, 1.0]);
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
    }
}
