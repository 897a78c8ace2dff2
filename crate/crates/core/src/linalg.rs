//! Dense linear algebra for the small symmetric matrices (dimension `n`, a
//! handful at most) that describe covariances, cores and moment boxes.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![S::one(); n])
    }

    pub fn from_diag(diag: &[S]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), v))
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[S]) -> S {
        crate::scalar::dot(x, &self.mul_vec(x))
    }

    pub fn is_symmetric(&self, tol: S) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Adds `delta * I` in place.
    pub fn add_diagonal(&mut self, delta: S) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] = self[(i, i)] + delta;
        }
    }

    /// Largest singular value of a symmetric matrix (largest |eigenvalue|).
    pub fn sym_operator_norm(&self) -> S {
        let eig = SymmetricEigen::new(self);
        eig.values.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<S> {
    lower: Matrix<S>,
}

impl<S: Real> Cholesky<S> {
    pub fn new(a: &Matrix<S>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.cols(),
            });
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > S::zero()) || !d.is_finite() {
                return Err(Error::DegenerateGeometry(format!(
                    "matrix is not positive definite (pivot {j} = {})",
                    d.f64()
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<S> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[S]) -> Vec<S> {
        let n = self.dim();
        let mut z = vec![S::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.lower[(i, k)] * z[k];
            }
            z[i] = s / self.lower[(i, i)];
        }
        z
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.dim();
        let z = self.solve_lower(b);
        let mut x = vec![S::zero(); n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s = s - self.lower[(k, i)] * x[k];
            }
            x[i] = s / self.lower[(i, i)];
        }
        x
    }

    /// `b^T A^{-1} b`.
    pub fn inv_quad_form(&self, b: &[S]) -> S {
        let z = self.solve_lower(b);
        crate::scalar::dot(&z, &z)
    }

    pub fn log_det(&self) -> S {
        (0..self.dim())
            .map(|i| self.lower[(i, i)].ln())
            .sum::<S>()
            * S::of(2.0)
    }

    /// `L z`, used to colour standard normal draws.
    pub fn mul_lower(&self, z: &[S]) -> Vec<S> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).fold(S::zero(), |s, k| s + self.lower[(i, k)] * z[k]))
            .collect()
    }

    pub fn inverse(&self) -> Matrix<S> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![S::zero(); n];
            e[j] = S::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Eigendecomposition `A = V diag(values) V^T` of a symmetric matrix by cyclic
/// Jacobi rotations. Eigenvectors are the columns of `vectors`, sorted by
/// descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<S> {
    pub values: Vec<S>,
    pub vectors: Matrix<S>,
}

impl<S: Real> SymmetricEigen<S> {
    pub fn new(a: &Matrix<S>) -> Self {
        let n = a.rows();
        let mut m = a.clone();
        let mut v = Matrix::identity(n);
        let eps = S::epsilon();
        for _sweep in 0..100 {
            let mut off = S::zero();
            let mut scale = S::zero();
            for i in 0..n {
                scale = scale + m[(i, i)] * m[(i, i)];
                for j in 0..n {
                    if i != j {
                        off = off + m[(i, j)] * m[(i, j)];
                    }
                }
            }
            if off <= eps * eps * scale.max(S::min_positive_value()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq == S::zero() {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    let theta = (aqq - app) / (S::of(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                    let c = S::one() / (t * t + S::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| m[(i, i)]).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (new_j, &old_j) in order.iter().enumerate() {
            for i in 0..n {
                vectors[(i, new_j)] = v[(i, old_j)];
            }
        }
        Self { values, vectors }
    }

    pub fn reconstruct(&self) -> Matrix<S> {
        let d = Matrix::from_diag(&self.values);
        self.vectors.matmul(&d).matmul(&self.vectors.transpose())
    }
}

/// Orthonormal basis of the orthogonal complement of `normal` (Gram-Schmidt on
/// the canonical basis).
pub fn complement_basis<S: Real>(normal: &[S]) -> Vec<Vec<S>> {
    let n = normal.len();
    let len = crate::scalar::norm(normal);
    let unit: Vec<S> = normal.iter().map(|&x| x / len).collect();
    let mut basis: Vec<Vec<S>> = vec![unit];
    for k in 0..n {
        let mut e = vec![S::zero(); n];
        e[k] = S::one();
        for b in &basis {
            let proj = crate::scalar::dot(&e, b);
            for i in 0..n {
                e[i] = e[i] - proj * b[i];
            }
        }
        let l = crate::scalar::norm(&e);
        if l > S::of(1e-6) {
            basis.push(e.into_iter().map(|x| x / l).collect());
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    basis
}
