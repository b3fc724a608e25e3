use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Columns `[start, start + width)` as a new tensor.
    pub fn slice_cols(&self, start: usize, width: usize) -> Self {
        Self::from_fn(self.rows, width, |r, c| self.get(r, start + c))
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Tensor2D]) -> Result<Self> {
        let rows = parts.first().map_or(0, |t| t.rows);
        if parts.iter().any(|t| t.rows != rows) {
            return Err(Error::shape("hcat needs equal row counts"));
        }
        let cols = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// `self · otherᵀ`, i.e. `(n×k) · (m×k)ᵀ = n×m`.
    pub fn matmul_t(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_t: {:?} · {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Tensor2D::zeros(self.rows, other.rows);
        gemm(
            (self.rows, self.cols, other.rows),
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · other`, i.e. `(k×n)ᵀ · (k×m) = n×m`.
    pub fn t_matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "t_matmul: {:?}ᵀ · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Tensor2D::zeros(self.cols, other.cols);
        gemm(
            (self.cols, self.rows, other.cols),
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {:?} · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        gemm(
            (self.rows, self.cols, other.cols),
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }
}

/// `C = A · B` for `A: m×k`, `B: k×n` given by (data, row stride, col stride).
fn gemm(dims: (usize, usize, usize), a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
    let (m, k, n) = dims;
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and
    // the contiguous row-major `c` (m×n); all shapes were checked by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
