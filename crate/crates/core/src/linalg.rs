//! Dense kernels for the Gaussian-process and variational back-ends.

use std::ops::{Index, IndexMut};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

/// Relative jitter ladder tried by [`cholesky`], in units of the mean diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
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

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Column vector.
    pub fn column(v: &[f64]) -> Self {
        DenseMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension("shape mismatch in subtraction".into()));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), orow);
                }
            }
        }
        Ok(out)
    }

    /// `self * selfᵀ`.
    pub fn gram(&self) -> Self {
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, vector has {}",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with four independent accumulators so it vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower-triangular `L` with `A + jitter * I = L Lᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyFactor {
    l: DenseMatrix,
    jitter_used: f64,
}

const BLOCK: usize = 64;

fn factor_in_place(l: &mut DenseMatrix) -> bool {
    let n = l.rows;
    let cols = l.cols;
    let data = &mut l.data;
    let mut i0 = 0;
    while i0 < n {
        let i1 = (i0 + BLOCK).min(n);
        for j in 0..i1 {
            let (head, tail) = data.split_at_mut(i0.max(j) * cols);
            // Row j either lives in `head` (j < i0) or is the first row of `tail`.
            for i in i0.max(j)..i1 {
                let off = (i - i0.max(j)) * cols;
                if j < i0 {
                    let rj = &head[j * cols..j * cols + j];
                    let ri = &mut tail[off..off + cols];
                    let s = ri[j] - dot(&ri[..j], rj);
                    ri[j] = s / head[j * cols + j];
                } else if i == j {
                    let ri = &mut tail[off..off + cols];
                    let s = ri[j] - dot(&ri[..j], &ri[..j]);
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    ri[j] = s.sqrt();
                } else {
                    let (rj_part, ri_part) = tail.split_at_mut(off);
                    let rj = &rj_part[..cols];
                    let ri = &mut ri_part[..cols];
                    let s = ri[j] - dot(&ri[..j], &rj[..j]);
                    ri[j] = s / rj[j];
                }
            }
        }
        i0 = i1;
    }
    for i in 0..n {
        for v in &mut data[i * cols + i + 1..(i + 1) * cols] {
            *v = 0.0;
        }
    }
    true
}

/// Cholesky factorization with an escalating diagonal jitter.
pub fn cholesky(a: &DenseMatrix) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("cholesky of a {}x{} matrix", a.rows, a.cols)));
    }
    let scale = a.max_abs();
    if !a.is_symmetric(1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Dimension("cholesky needs a symmetric matrix".into()));
    }
    let n = a.rows;
    let mean_diag = if n == 0 { 0.0 } else { a.diag().iter().sum::<f64>() / n as f64 };
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * mean_diag.abs();
        if rel > 0.0 && jitter == 0.0 {
            continue;
        }
        let mut l = a.clone();
        l.add_diag(jitter);
        if factor_in_place(&mut l) {
            return Ok(CholeskyFactor { l, jitter_used: jitter });
        }
        last = jitter;
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

impl CholeskyFactor {
    /// Wraps an existing lower-triangular factor with a positive diagonal.
    pub fn from_lower(l: DenseMatrix) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::Dimension("factor must be square".into()));
        }
        for i in 0..l.rows {
            if !(l[(i, i)] > 0.0) {
                return Err(Error::NotPositiveDefinite { jitter: 0.0 });
            }
            if l.row(i)[i + 1..].iter().any(|v| *v != 0.0) {
                return Err(Error::Dimension("factor must be lower triangular".into()));
            }
        }
        Ok(CholeskyFactor { l, jitter_used: 0.0 })
    }

    pub fn l(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// `L Lᵀ`, i.e. the jittered input matrix.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.l.gram()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::Dimension(format!("factor has dimension {}, got {n}", self.dim())));
        }
        Ok(())
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) -> Result<()> {
        self.check_len(b.len())?;
        for i in 0..b.len() {
            let row = self.l.row(i);
            b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
        }
        Ok(())
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) -> Result<()> {
        self.check_len(y.len())?;
        for i in (0..y.len()).rev() {
            y[i] /= self.l[(i, i)];
            let yi = y[i];
            axpy(-yi, &self.l.row(i)[..i], &mut y[..i]);
        }
        Ok(())
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x)?;
        self.solve_upper_in_place(&mut x)?;
        Ok(x)
    }

    /// `L⁻¹ B` for a right-hand side with many columns, in place.
    pub fn forward_solve_columns(&self, b: &mut DenseMatrix) -> Result<()> {
        self.check_len(b.rows)?;
        let cols = b.cols;
        for i in 0..b.rows {
            let row = self.l.row(i);
            let (done, rest) = b.data.split_at_mut(i * cols);
            let bi = &mut rest[..cols];
            for (k, &lik) in row[..i].iter().enumerate() {
                if lik != 0.0 {
                    axpy(-lik, &done[k * cols..(k + 1) * cols], bi);
                }
            }
            let inv = 1.0 / row[i];
            bi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(())
    }

    /// `L⁻ᵀ Y` in place.
    pub fn backward_solve_columns(&self, y: &mut DenseMatrix) -> Result<()> {
        self.check_len(y.rows)?;
        let cols = y.cols;
        for i in (0..y.rows).rev() {
            let row = self.l.row(i);
            let inv = 1.0 / row[i];
            let (head, rest) = y.data.split_at_mut(i * cols);
            let yi = &mut rest[..cols];
            yi.iter_mut().for_each(|v| *v *= inv);
            for (k, &lik) in row[..i].iter().enumerate() {
                if lik != 0.0 {
                    axpy(-lik, yi, &mut head[k * cols..(k + 1) * cols]);
                }
            }
        }
        Ok(())
    }

    /// `(L⁻¹)` as a dense lower-triangular matrix.
    pub fn lower_inverse(&self) -> DenseMatrix {
        let mut inv = DenseMatrix::identity(self.dim());
        self.forward_solve_columns(&mut inv).expect("square");
        inv
    }

    /// `(A + jitter I)⁻¹`.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let linv = self.lower_inverse();
        let mut out = DenseMatrix::zeros(n, n);
        for k in 0..n {
            let row = &linv.row(k)[..=k];
            for (i, &ri) in row.iter().enumerate() {
                axpy(ri, &row[..=i], &mut out.row_mut(i)[..=i]);
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[(j, i)] = out[(i, j)];
            }
        }
        out
    }

    /// `L x`.
    pub fn mul_lower(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok((0..x.len()).map(|i| dot(&self.l.row(i)[..=i], &x[..=i])).collect())
    }
}

/// Solves `(A + jitter I) X = B` for every column of `B`.
pub fn solve_spd(f: &CholeskyFactor, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut x = b.clone();
    f.forward_solve_columns(&mut x)?;
    f.backward_solve_columns(&mut x)?;
    Ok(x)
}

pub fn log_det(f: &CholeskyFactor) -> f64 {
    2.0 * f.l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// One draw from `N(mean, L Lᵀ)`.
pub fn mvn_sample_with(mean: &[f64], f: &CholeskyFactor, rng: &mut Rng) -> Result<Vec<f64>> {
    f.check_len(mean.len())?;
    let z: Vec<f64> = (0..mean.len()).map(|_| StandardNormal.sample(rng)).collect();
    let lz = f.mul_lower(&z)?;
    Ok(mean.iter().zip(lz).map(|(m, v)| m + v).collect())
}

pub fn mvn_sample(mean: &[f64], f: &CholeskyFactor, seed: u64) -> Result<Vec<f64>> {
    mvn_sample_with(mean, f, &mut seeded(seed))
}
