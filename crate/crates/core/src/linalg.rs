//! Small dense linear algebra: sample covariance, column standardization and a
//! cyclic Jacobi eigensolver for symmetric matrices.
//!
//! Everything here works on row-major `f64` storage and is sized for the
//! handful of variables a pollutant panel carries. Results are deterministic:
//! the same input always yields the same bits.

use crate::error::{Error, Result};

/// Columns whose sample standard deviation is at or below this are degenerate.
pub const DEGENERATE_SD: f64 = 1e-12;

/// Largest dimension accepted by [`eigen_sym`].
pub const MAX_EIGEN_DIM: usize = 64;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-12;
const SIGN_TOL: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Copy of rows `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::InvalidInput(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Sample standard deviations with divisor `n - 1`.
    pub fn column_sds(&self) -> Vec<f64> {
        let means = self.column_means();
        let mut ss = vec![0.0; self.cols];
        for i in 0..self.rows {
            for ((s, v), m) in ss.iter_mut().zip(self.row(i)).zip(&means) {
                let d = v - m;
                *s += d * d;
            }
        }
        let denom = (self.rows as f64 - 1.0).max(1.0);
        ss.into_iter().map(|s| (s / denom).sqrt()).collect()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric matrix in full (mirrored) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    /// Wraps a square matrix, rejecting any asymmetry.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.rows, m.cols
            )));
        }
        for i in 0..m.rows {
            for j in i + 1..m.cols {
                if m[(i, j)] != m[(j, i)] && !(m[(i, j)].is_nan() && m[(j, i)].is_nan()) {
                    return Err(Error::InvalidInput(format!(
                        "entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(Self { inner: m })
    }

    /// Builds from the upper triangle of `f`, mirroring it to the lower one.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { inner: m }
    }

    pub fn dim(&self) -> usize {
        self.inner.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }
}

/// Eigenvalues in non-increasing order with matching unit eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenResult {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }
}

/// Column standardization output: `values[i][j] = (x[i][j] - means[j]) / sds[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Matrix,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Unbiased sample covariance (divisor `n - 1`).
///
/// When `centered` is false the column means are subtracted first; when it is
/// true the columns are taken as already centered.
pub fn covariance(x: &Matrix, centered: bool) -> Result<SymMatrix> {
    let n = x.rows();
    let p = x.cols();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidInput("covariance of a matrix with no columns".into()));
    }
    let means = if centered {
        vec![0.0; p]
    } else {
        x.column_means()
    };
    let mut acc = Matrix::zeros(p, p);
    let mut dev = vec![0.0; p];
    for i in 0..n {
        for ((d, v), m) in dev.iter_mut().zip(x.row(i)).zip(&means) {
            *d = v - m;
        }
        for a in 0..p {
            for b in a..p {
                acc[(a, b)] += dev[a] * dev[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    Ok(SymMatrix::from_upper(p, |a, b| acc[(a, b)] / denom))
}

pub fn standardize_columns(x: &Matrix) -> Result<Standardized> {
    if x.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    let means = x.column_means();
    let sds = x.column_sds();
    if let Some((column, &sd)) = sds
        .iter()
        .enumerate()
        .find(|(_, sd)| !(**sd > DEGENERATE_SD))
    {
        return Err(Error::DegenerateColumn { column, sd });
    }
    let values = Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - means[j]) / sds[j]);
    Ok(Standardized { values, means, sds })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Stops once every off-diagonal magnitude is below `1e-12 * ||M||_F`.
/// Eigenvalues come back non-increasing (near-ties within `1e-12` keep solver
/// order); each eigenvector's first component above `1e-12` in magnitude is
/// made positive.
pub fn eigen_sym(m: &SymMatrix) -> Result<EigenResult> {
    let n = m.dim();
    if n > MAX_EIGEN_DIM {
        return Err(Error::InvalidInput(format!(
            "eigen_sym supports dimension up to {MAX_EIGEN_DIM}, got {n}"
        )));
    }
    if !m.as_matrix().is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }

    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let tol = OFF_DIAGONAL_TOL * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if max_off_diagonal(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, t);
            }
        }
    }
    if !converged && max_off_diagonal(&a) > tol {
        return Err(Error::InvalidInput(format!(
            "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let raw: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // insertion sort: stable, and only moves an entry past a strictly larger gap
    for i in 1..n {
        let mut j = i;
        while j > 0 && raw[order[j]] > raw[order[j - 1]] + TIE_TOL {
            order.swap(j, j - 1);
            j -= 1;
        }
    }

    let values: Vec<f64> = order.iter().map(|&k| raw[k]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let flip = (0..n)
            .map(|i| v[(i, src)])
            .find(|x| x.abs() > SIGN_TOL)
            .is_some_and(|x| x < 0.0);
        for i in 0..n {
            let x = v[(i, src)];
            vectors[(i, dst)] = if flip { -x } else { x };
        }
    }
    Ok(EigenResult { values, vectors })
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut off: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            off = off.max(a[(i, j)].abs());
        }
    }
    off
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.rows();
    let apq = a[(p, q)];
    let tau = s / (1.0 + c);
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r != p && r != q {
            let arp = a[(r, p)];
            let arq = a[(r, q)];
            let new_rp = arp - s * (arq + tau * arp);
            let new_rq = arq + s * (arp - tau * arq);
            a[(r, p)] = new_rp;
            a[(p, r)] = new_rp;
            a[(r, q)] = new_rq;
            a[(q, r)] = new_rq;
        }
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = vrp - s * (vrq + tau * vrp);
        v[(r, q)] = vrq + s * (vrp - tau * vrq);
    }
}
