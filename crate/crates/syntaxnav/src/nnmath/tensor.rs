//! Dense row-major f64 tensors. Rank 0 (scalar), 1 (vector) and 2 (matrix)
//! are the only shapes the model needs.

use super::MathError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Creation boundary: rejects NaN/Inf and shape/len mismatches.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, MathError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(MathError::ShapeMismatch {
                context: format!("tensor shape {shape:?} expects {expect} values, got {}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MathError::NonFinite);
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MathError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
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

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn as_scalar(&self) -> Result<f64, MathError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(MathError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// y = M x for an [r, c] matrix and length-c vector.
    pub fn matvec(&self, x: &Tensor) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), c);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.data.iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    /// y = M^T x for an [r, c] matrix and length-r vector.
    pub fn matvec_t(&self, x: &Tensor) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), r);
        let mut out = vec![0.0; c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let xi = x.data[i];
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += xi * a;
            }
        }
        out
    }

    /// self += scale * outer(u, v), with self an [|u|, |v|] matrix.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        let c = self.cols();
        debug_assert_eq!(self.rows(), u.len());
        debug_assert_eq!(c, v.len());
        for (i, ui) in u.iter().enumerate() {
            let row = &mut self.data[i * c..(i + 1) * c];
            let s = scale * ui;
            for (r, vj) in row.iter_mut().zip(v.iter()) {
                *r += s * vj;
            }
        }
    }

    /// self += scale * other, elementwise.
    pub fn add_scaled(&mut self, other: &[f64], scale: f64) {
        debug_assert_eq!(self.data.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }
}

/// Numerically stable softmax with max-subtraction. Order-preserving.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, MathError> {
    if logits.is_empty() {
        return Err(MathError::EmptyInput);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// log(softmax(logits)) computed without forming the exponentials' ratio.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>, MathError> {
    if logits.is_empty() {
        return Err(MathError::EmptyInput);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|v| v - max - log_sum).collect())
}
