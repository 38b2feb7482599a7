//! Dense row-major tensors and the elementary neural ops.
//!
//! Storage precision is the scalar parameter `S`; every reduction accumulates
//! in f64 left-to-right and rounds back to `S` once at the end, so repeated
//! runs are bit-identical.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<'de, S: Scalar + serde::Deserialize<'de>> serde::Deserialize<'de> for Tensor<S> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Raw<S> {
            shape: Vec<usize>,
            data: Vec<S>,
        }
        let raw = Raw::deserialize(de)?;
        Tensor::new(raw.shape, raw.data).map_err(serde::de::Error::custom)
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        &mut self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn validate_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: what.into() });
        }
        Ok(())
    }

    pub fn is_2d(&self) -> bool {
        self.shape.len() == 2
    }

    fn require_2d(&self, op: &'static str) -> Result<()> {
        if !self.is_2d() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape.clone(),
                right: vec![],
            });
        }
        Ok(())
    }

    /// Standard matrix product; inner dimensions must agree.
    ///
    /// Each output entry is a left-to-right f64 dot product rounded to
    /// storage precision once at the end.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.require_2d("matmul")?;
        other.require_2d("matmul")?;
        if self.cols() != other.rows() {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (r, k, c) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..c {
                let mut acc = 0.0f64;
                for (kk, &a) in a_row.iter().enumerate() {
                    acc += a.as_f64() * other.data[kk * c + j].as_f64();
                }
                out[i * c + j] = S::of_f64(acc);
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: out,
        })
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub(crate) fn matmul_nt(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.require_2d("matmul_nt")?;
        other.require_2d("matmul_nt")?;
        if self.cols() != other.cols() {
            return Err(Error::DimensionMismatch {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (r, k, c) = (self.rows(), self.cols(), other.rows());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..c {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0f64;
                for kk in 0..k {
                    acc += a_row[kk].as_f64() * b_row[kk].as_f64();
                }
                out[i * c + j] = S::of_f64(acc);
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor<S> {
        assert!(self.is_2d(), "transpose needs a 2-D tensor");
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    /// Row-wise softmax with max subtraction; rows sum to 1 within 1e-6.
    pub fn softmax_rows(&self) -> Tensor<S> {
        assert!(self.is_2d(), "softmax_rows needs a 2-D tensor");
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let max = row
                .iter()
                .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let mut exps = vec![0.0f64; c];
            let mut sum = 0.0f64;
            for (j, v) in row.iter().enumerate() {
                let e = (v.as_f64() - max).exp();
                exps[j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] = S::of_f64(exps[j] / sum);
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch {
                op: "add",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| S::of_f64(a.as_f64() + b.as_f64()))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch {
                op: "mul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| S::of_f64(a.as_f64() * b.as_f64()))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&a| S::of_f64(a.as_f64() * factor))
                .collect(),
        }
    }

    pub fn identity(n: usize) -> Tensor<S> {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Convert storage precision.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::of_f64(v.as_f64())).collect(),
        }
    }
}

/// Euclidean norm, accumulated in f64.
pub fn vector_norm<S: Scalar>(v: &[S]) -> f64 {
    let mut acc = 0.0f64;
    for x in v {
        let x = x.as_f64();
        acc += x * x;
    }
    acc.sqrt()
}

/// Angle between two vectors in degrees: arccos of the clamped cosine.
pub fn angle_degrees<S: Scalar>(u: &[S], v: &[S]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            op: "angle_degrees",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    let nu = vector_norm(u);
    let nv = vector_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector {
            op: "angle_degrees",
        });
    }
    let mut dot = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        dot += a.as_f64() * b.as_f64();
    }
    let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// RMS normalization: `x / sqrt(mean(x²) + eps) ⊙ scale`, per call.
pub fn rms_norm<S: Scalar>(x: &[S], scale: &[S], eps: f64) -> Vec<S> {
    assert_eq!(x.len(), scale.len(), "rms_norm scale length");
    let n = x.len() as f64;
    let mut ms = 0.0f64;
    for v in x {
        let v = v.as_f64();
        ms += v * v;
    }
    let r = (ms / n + eps).sqrt();
    x.iter()
        .zip(scale)
        .map(|(&v, &g)| S::of_f64(v.as_f64() / r * g.as_f64()))
        .collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation: `x · sigmoid(x)`, elementwise.
pub fn silu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter()
        .map(|&v| {
            let v = v.as_f64();
            S::of_f64(v * sigmoid(v))
        })
        .collect()
}

/// Cross-entropy of a logit vector against a target class, in nats.
///
/// Computed as `logsumexp(logits) − logits[target]` with max subtraction,
/// so a saturated correct prediction yields exactly 0.
pub fn cross_entropy<S: Scalar>(logits: &[S], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            what: "cross_entropy target",
            index: target,
            limit: logits.len(),
        });
    }
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let mut sum = 0.0f64;
    for v in logits {
        sum += (v.as_f64() - max).exp();
    }
    let lse = max + sum.ln();
    Ok(lse - logits[target].as_f64())
}

/// Log-probabilities of a logit vector (stable log-softmax).
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let mut sum = 0.0f64;
    for v in logits {
        sum += (v.as_f64() - max).exp();
    }
    let lse = max + sum.ln();
    logits.iter().map(|v| v.as_f64() - lse).collect()
}

/// Index of the largest entry; ties resolve to the smaller index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if x.as_f64() > v[best].as_f64() {
            best = i;
        }
    }
    best
}
