//! Dense vectors and row-major matrices, plus the dense reference path.
//!
//! Every inner product here is accumulated sequentially over the columns, in
//! ascending order, in `f32`. The sparse kernels reuse [`dot`] so skipped and
//! dense paths agree bit-for-bit on every row they both compute.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this many multiply-adds a kernel stays on the calling thread.
pub(crate) const PAR_MIN_WORK: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct DenseVector {
    data: Vec<f32>,
}

impl DenseVector {
    /// Wraps `data`, rejecting empty vectors and NaN/Inf entries.
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidDims("vector length must be positive".into()));
        }
        check_finite("vector", &data)?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Self {
            data: vec![0.0; len],
        }
    }

    /// Kernel outputs skip the finiteness scan.
    pub(crate) fn from_raw(data: Vec<f32>) -> Self {
        debug_assert!(!data.is_empty());
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Bitwise equality, distinguishing `-0.0` from `+0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Rescales to unit root-mean-square. An all-zero vector is returned unchanged.
    pub fn rms_normalized(&self) -> Self {
        let sum_sq: f64 = self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        let rms = (sum_sq / self.data.len() as f64).sqrt();
        if rms == 0.0 || !rms.is_finite() {
            return self.clone();
        }
        let scale = (1.0 / rms) as f32;
        Self::from_raw(self.data.iter().map(|&v| v * scale).collect())
    }
}

impl TryFrom<Vec<f32>> for DenseVector {
    type Error = Error;

    fn try_from(data: Vec<f32>) -> Result<Self> {
        Self::new(data)
    }
}

impl From<DenseVector> for Vec<f32> {
    fn from(v: DenseVector) -> Self {
        v.data
    }
}

/// Row-major `rows x cols` matrix. Row `i` produces output element `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDims(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::new",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        check_finite("matrix", &data)?;
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDims("ragged rows".into()));
        }
        Self::new(n, cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// FATReLU cutoff. `theta == 0` is plain ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationThreshold(f32);

impl ActivationThreshold {
    pub const RELU: Self = Self(0.0);

    pub fn new(theta: f32) -> Result<Self> {
        if !theta.is_finite() || theta < 0.0 {
            return Err(Error::InvalidDims(format!(
                "activation threshold must be finite and >= 0, got {theta}"
            )));
        }
        Ok(Self(theta))
    }

    pub fn theta(self) -> f32 {
        self.0
    }
}

pub(crate) fn check_finite(what: &str, data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
            value: data[index],
        }),
    }
}

/// Sequential left-to-right inner product.
#[inline]
pub(crate) fn dot(row: &[f32], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (w, v) in row.iter().zip(x) {
        acc += w * v;
    }
    acc
}

pub fn dense_gemv(w: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    if x.len() != w.cols() {
        return Err(Error::shape("dense_gemv", format!("x.len == {}", w.cols()), x.len()));
    }
    let cols = w.cols();
    let xs = x.as_slice();
    let mut out = vec![0.0f32; w.rows()];
    if w.rows() * cols < PAR_MIN_WORK {
        for (o, row) in out.iter_mut().zip(w.as_slice().chunks_exact(cols)) {
            *o = dot(row, xs);
        }
    } else {
        out.par_iter_mut()
            .zip(w.as_slice().par_chunks_exact(cols))
            .with_min_len(16)
            .for_each(|(o, row)| *o = dot(row, xs));
    }
    Ok(DenseVector::from_raw(out))
}

/// `v[i]` if `v[i] > theta`, else `+0.0`.
pub fn relu_theta(v: &DenseVector, t: ActivationThreshold) -> DenseVector {
    let theta = t.theta();
    DenseVector::from_raw(
        v.as_slice()
            .iter()
            .map(|&e| if e > theta { e } else { 0.0 })
            .collect(),
    )
}

pub fn hadamard(a: &DenseVector, b: &DenseVector) -> Result<DenseVector> {
    if a.len() != b.len() {
        return Err(Error::shape("hadamard", a.len(), b.len()));
    }
    Ok(DenseVector::from_raw(
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect(),
    ))
}
