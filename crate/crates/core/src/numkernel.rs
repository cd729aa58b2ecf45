// SPDX-License-Identifier: Apache-2.0

//! Dense f32 kernels with a fixed accumulation order.
//!
//! Every reduction runs index-ascending in `f32` with no fused or reordered
//! sums, so a forward pass or a probe fit is bit-for-bit reproducible. The
//! optional row/column parallelism in [`matmul_bt`] only partitions output
//! cells; the inner sum for each cell is unchanged.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of finite `f32` values.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from values the caller knows are finite and sized.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {bad} has {} values, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    /// Copies the listed columns, in the order given.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Range(format!(
                "column {c} outside a matrix with {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(Self::from_parts(self.rows, cols.len(), data))
    }

    /// Copies the listed rows, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self::from_parts(rows.len(), self.cols, data)
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// A finite `f32` vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Vector(Vec<f32>);

impl TryFrom<Vec<f32>> for Vector {
    type Error = Error;

    fn try_from(data: Vec<f32>) -> Result<Self> {
        Vector::new(data)
    }
}

impl From<Vector> for Vec<f32> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Self(data))
    }

    pub(crate) fn from_finite(data: Vec<f32>) -> Self {
        Self(data)
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// `c[i][j] = Σ_t a[i][t]·b[t][j]`, summed with `t` ascending.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for t in 0..k {
                acc += a.data[i * k + t] * b.data[t * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Matrix::from_parts(m, n, out))
}

/// `c[i][j] = Σ_t a[i][t]·w[j][t]`: multiplication by the transpose of a
/// row-major `[out × in]` weight, the layout linear layers are stored in.
///
/// Same per-cell accumulation order as [`matmul`] against `wᵀ`.
pub fn matmul_bt(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    if a.cols != w.cols {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by the transpose of {}x{}",
            a.rows, a.cols, w.rows, w.cols
        )));
    }
    let (m, n) = (a.rows, w.rows);
    let mut out = vec![0.0f32; m * n];
    crate::par::for_each_block(&mut out, n, m * n * a.cols, |i, first, cells| {
        let x = a.row(i);
        for (j, cell) in cells.iter_mut().enumerate() {
            *cell = dot(x, w.row(first + j));
        }
    });
    Ok(Matrix::from_parts(m, n, out))
}

/// Index-ascending dot product.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Temperature softmax with max subtraction.
///
/// # Panics
///
/// If `temperature` is not strictly positive.
pub fn softmax(v: &[f32], temperature: f32) -> Vec<f32> {
    assert!(temperature > 0.0, "softmax temperature must be positive");
    if v.is_empty() {
        return Vec::new();
    }
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = v.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let mut total = 0.0f32;
    for e in &out {
        total += e;
    }
    for e in &mut out {
        *e /= total;
    }
    out
}

pub fn rms_norm(v: &[f32], gain: &[f32], eps: f32) -> Result<Vec<f32>> {
    if v.len() != gain.len() {
        return Err(Error::Shape(format!(
            "rms_norm over {} values with {} gains",
            v.len(),
            gain.len()
        )));
    }
    let mut sq = 0.0f32;
    for x in v {
        sq += x * x;
    }
    let inv = 1.0 / (sq / v.len() as f32 + eps).sqrt();
    Ok(v.iter().zip(gain).map(|(x, g)| g * (x * inv)).collect())
}

/// Mean/variance normalization with gain and optional bias.
pub fn layer_norm(v: &[f32], gain: &[f32], bias: Option<&[f32]>, eps: f32) -> Result<Vec<f32>> {
    if v.len() != gain.len() || bias.is_some_and(|b| b.len() != v.len()) {
        return Err(Error::Shape(format!(
            "layer_norm over {} values with {} gains",
            v.len(),
            gain.len()
        )));
    }
    let n = v.len() as f32;
    let mut sum = 0.0f32;
    for x in v {
        sum += x;
    }
    let mean = sum / n;
    let mut var = 0.0f32;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    let inv = 1.0 / (var / n + eps).sqrt();
    Ok(v.iter()
        .enumerate()
        .map(|(i, x)| {
            let y = gain[i] * ((x - mean) * inv);
            match bias {
                Some(b) => y + b[i],
                None => y,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Silu,
    GeluTanh,
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Self::Silu),
            "gelu_tanh" => Ok(Self::GeluTanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activate_scalar(kind: ActivationKind, x: f32) -> f32 {
    match kind {
        ActivationKind::Silu => x * sigmoid(x),
        ActivationKind::GeluTanh => {
            const SQRT_2_OVER_PI: f32 = 0.797_884_6;
            0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
        }
    }
}

pub fn activate(kind: ActivationKind, x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| activate_scalar(kind, v)).collect()
}

/// Columns whose standard deviation falls below this are treated as constant.
pub const DEGENERATE_STD: f32 = 1e-12;

/// Per-column standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub means: Vec<f32>,
    pub stds: Vec<f32>,
}

impl ColumnStats {
    pub fn is_degenerate(&self, col: usize) -> bool {
        self.stds[col] < DEGENERATE_STD
    }

    /// Restriction to a subset of columns, in the order given.
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            means: cols.iter().map(|&c| self.means[c]).collect(),
            stds: cols.iter().map(|&c| self.stds[c]).collect(),
        }
    }
}

/// Z-scores each column, computing population statistics from `x` when
/// `stats` is `None`. Constant columns map to zero.
pub fn standardize(x: &Matrix, stats: Option<&ColumnStats>) -> Result<(Matrix, ColumnStats)> {
    let stats = match stats {
        Some(s) => {
            if s.means.len() != x.cols || s.stds.len() != x.cols {
                return Err(Error::Shape(format!(
                    "standardization stats cover {} columns, matrix has {}",
                    s.means.len(),
                    x.cols
                )));
            }
            s.clone()
        }
        None => column_stats(x),
    };
    let mut out = Vec::with_capacity(x.data.len());
    for i in 0..x.rows {
        for (c, &v) in x.row(i).iter().enumerate() {
            out.push(if stats.is_degenerate(c) {
                0.0
            } else {
                (v - stats.means[c]) / stats.stds[c]
            });
        }
    }
    Ok((Matrix::new(x.rows, x.cols, out)?, stats))
}

fn column_stats(x: &Matrix) -> ColumnStats {
    let n = x.rows as f32;
    let mut means = vec![0.0f32; x.cols];
    let mut stds = vec![0.0f32; x.cols];
    if x.rows == 0 {
        return ColumnStats { means, stds };
    }
    for (c, (mean, std)) in means.iter_mut().zip(stds.iter_mut()).enumerate() {
        let mut sum = 0.0f32;
        for i in 0..x.rows {
            sum += x.get(i, c);
        }
        *mean = sum / n;
        let mut var = 0.0f32;
        for i in 0..x.rows {
            let d = x.get(i, c) - *mean;
            var += d * d;
        }
        *std = (var / n).sqrt();
    }
    ColumnStats { means, stds }
}
