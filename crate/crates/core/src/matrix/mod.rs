//! Dense real matrices: symmetric `n×n` values for the process state and
//! integrands, rectangular values for the dilation-based results.

mod eigen;
mod functions;

pub use eigen::{sym_eigen, sym_eigen_with, sym_eigenvalues, EigenSettings, Spectrum};
pub use functions::{
    hermitian_dilation, lambda_max, lambda_min, loewner_leq, loewner_leq_with, matrix_abs,
    schatten_norm, schatten_norm_rect, schatten_of_eigenvalues, spectral_map, spectral_norm,
    trace_exp, DEFAULT_PSD_TOL,
};

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real symmetric matrix stored as a full row-major square.
///
/// Every constructor writes both triangles from a single evaluation of the
/// upper triangle, so `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diag(&vec![1.0; dim])
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on `i <= j` only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Parses nested rows, rejecting ragged, non-finite or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rect = RectMatrix::from_rows(rows)?;
        rect.to_symmetric()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major view of the full square.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.dim.max(1))
            .take(self.dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim;
        (0..n).all(|i| (0..n).all(|j| i == j || self.data[i * n + j] == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`, entrywise.
    pub fn add_scaled(&mut self, s: f64, other: &SymMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self²`, computed exactly symmetric from row dot products.
    pub fn square(&self) -> Self {
        let n = self.dim;
        Self::from_fn(n, |i, j| {
            let ri = &self.data[i * n..(i + 1) * n];
            let rj = &self.data[j * n..(j + 1) * n];
            ri.iter().zip(rj).map(|(a, b)| a * b).sum()
        })
    }

    /// General (not necessarily symmetric) product `self · other`.
    pub fn matmul(&self, other: &SymMatrix) -> RectMatrix {
        RectMatrix::from(self).matmul(&RectMatrix::from(other))
    }

    /// Symmetrised copy of the general matrix `m`, taking the upper triangle.
    pub(crate) fn from_upper(m: &RectMatrix) -> Self {
        debug_assert_eq!(m.rows(), m.cols());
        Self::from_fn(m.rows(), |i, j| m.get(i, j))
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.rows()
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in addition");
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in subtraction");
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;

    fn mul(self, s: f64) -> SymMatrix {
        self.scaled(s)
    }
}

/// Dense real `rows × cols` matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RectMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RectMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::domain("matrix must have at least one row"));
        }
        let c = rows[0].len();
        if c == 0 {
            return Err(Error::domain("matrix must have at least one column"));
        }
        if let Some(bad) = rows.iter().position(|row| row.len() != c) {
            return Err(Error::domain(format!(
                "ragged matrix: row {} has {} entries, expected {c}",
                bad + 1,
                rows[bad].len()
            )));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix entries must be finite"));
        }
        Ok(Self {
            rows: r,
            cols: c,
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &RectMatrix) -> RectMatrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = RectMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, other: &RectMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `Aᵀ A` (cols × cols).
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::from_fn(self.cols, |i, j| {
            (0..self.rows)
                .map(|k| self.get(k, i) * self.get(k, j))
                .sum()
        })
    }

    /// `A Aᵀ` (rows × rows).
    pub fn cogram(&self) -> SymMatrix {
        SymMatrix::from_fn(self.rows, |i, j| {
            let ri = &self.data[i * self.cols..(i + 1) * self.cols];
            let rj = &self.data[j * self.cols..(j + 1) * self.cols];
            ri.iter().zip(rj).map(|(a, b)| a * b).sum()
        })
    }

    /// Converts a square, exactly symmetric matrix.
    pub fn to_symmetric(&self) -> Result<SymMatrix> {
        if self.rows != self.cols {
            return Err(Error::domain(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if self.get(i, j) != self.get(j, i) {
                    return Err(Error::validation(format!(
                        "not symmetric: entry ({},{}) = {} but ({},{}) = {}",
                        i + 1,
                        j + 1,
                        self.get(i, j),
                        j + 1,
                        i + 1,
                        self.get(j, i)
                    )));
                }
            }
        }
        Ok(SymMatrix::from_upper(self))
    }
}

impl From<&SymMatrix> for RectMatrix {
    fn from(m: &SymMatrix) -> Self {
        RectMatrix {
            rows: m.dim,
            cols: m.dim,
            data: m.data.clone(),
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for RectMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<RectMatrix> for Vec<Vec<f64>> {
    fn from(m: RectMatrix) -> Self {
        m.to_rows()
    }
}
