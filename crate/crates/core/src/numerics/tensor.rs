use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major matrix of `f64`.
///
/// Everything in the toolkit is two-dimensional: vectors are `1×n` or `n×1`
/// and scalars are `1×1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build from nested rows. Panics on ragged input; meant for literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// The single value of a `1×1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::Index {
                    index: i,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        })
    }

    /// Index of the largest entry per row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows).map(|i| argmax(self.row(i))).collect()
    }

    /// Largest elementwise absolute difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = j;
        }
    }
    best
}

/// `c = a·b + beta·c` for an `m×k` by `k×n` product, with explicit strides
/// so transposed operands need no copy.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: strides describe in-bounds views of the given slices; c is
    // m×n row-major and exclusively borrowed.
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Row-wise softmax of `x / temperature` with max subtraction.
pub fn row_softmax(x: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let mut out = x.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i), temperature);
    }
    Ok(out)
}

/// Row-wise log-softmax of `x / temperature`.
pub fn row_log_softmax(x: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let mut out = x.clone();
    for i in 0..out.rows {
        log_softmax_in_place(out.row_mut(i), temperature);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    for v in row.iter_mut() {
        *v = (*v - max) / temperature - lse;
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Inverted-dropout mask: zeros with probability `p`, survivors `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Result<Tensor> {
    check_dropout(p)?;
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Ok(Tensor { rows, cols, data })
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout must be in [0,1), got {p}")));
    }
    Ok(())
}

pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    check_dropout(p)?;
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.rows, x.cols, p, rng)?;
    let mut out = x.clone();
    for (v, m) in out.data.iter_mut().zip(mask.data.iter()) {
        *v *= m;
    }
    Ok(out)
}
