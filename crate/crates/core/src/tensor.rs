// SPDX-License-Identifier: Apache-2.0

//! Dense row-major `f64` tensors and the plain (non-recording) kernels the
//! model is built from. The recording graph in [`crate::autodiff`] reuses the
//! slice-level kernels here so both paths produce bitwise-identical values.

use serde::{Deserialize, Serialize};

use crate::error::{CdpError, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero-sized dimensions, length mismatches
    /// and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(CdpError::Config(format!(
                "tensor shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(CdpError::dim("tensor data length", &[len], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CdpError::NonFinite("tensor data".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

// ---------------------------------------------------------------------------
// slice kernels

/// `out = W·x + b` for row-major `W` of shape `b.len() × x.len()`.
pub(crate) fn affine_into(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        *o = b[r] + dot(row, x);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators keep the loop vectorizable while staying
    // order-deterministic.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep the result inside the open unit interval even when exp saturates.
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub(crate) fn bce_scalar(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub(crate) fn mse_slices(pred: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sum / pred.len() as f64
}

// ---------------------------------------------------------------------------
// public tensor-level kernels

/// `W·x + b`.
pub fn affine(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (m, n) = match w.shape() {
        [m, n] => (*m, *n),
        other => return Err(CdpError::dim("affine weight must be rank 2", &[0, 0], other)),
    };
    if b.shape() != [m] {
        return Err(CdpError::dim("affine bias", &[m], b.shape()));
    }
    if x.shape() != [n] {
        return Err(CdpError::dim("affine input", &[n], x.shape()));
    }
    let mut out = Tensor::zeros(&[m]);
    affine_into(w.data(), b.data(), x.data(), out.data_mut());
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Logistic function in the branch form that avoids `exp` overflow.
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}

/// Max-subtracted softmax over a rank-1 tensor.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    softmax_into(x.data(), out.data_mut());
    out
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(CdpError::dim("mse operands", pred.shape(), target.shape()));
    }
    Ok(mse_slices(pred.data(), target.data()))
}

/// Binary cross-entropy `−[y ln p + (1−y) ln(1−p)]` with `p` clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    bce_scalar(p, y)
}
