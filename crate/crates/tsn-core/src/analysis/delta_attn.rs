//! Decomposition of the attention-score change under activation
//! perturbations: with A = QKᵀ and perturbations ΔQ, ΔK restricted to chosen
//! frequency pairs,
//!
//!   ΔA = Q·ΔKᵀ (term 1) + ΔQ·Kᵀ (term 2) + ΔQ·ΔKᵀ (term 3)
//!
//! holds exactly; the residual of the reconstruction is pure float error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardTrace;
use crate::rope::RopeConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaAttnDecomposition {
    /// (Q+ΔQ)(K+ΔK)ᵀ − QKᵀ, computed from the products (not the terms).
    pub delta_total: Tensor<f64>,
    pub term1: Tensor<f64>,
    pub term2: Tensor<f64>,
    pub term3: Tensor<f64>,
    /// max |term1 + term2 + term3 − ΔA|.
    pub max_residual: f64,
    pub max_abs_delta: f64,
}

/// Decompose the attention-score change. Scores are unscaled (no 1/√d).
pub fn delta_attention(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    dq: &Tensor<f64>,
    dk: &Tensor<f64>,
) -> Result<DeltaAttnDecomposition> {
    for (name, t) in [("ΔQ", dq), ("ΔK", dk)] {
        if t.shape() != q.shape() && t.shape() != k.shape() {
            return Err(Error::DimensionMismatch {
                op: if name == "ΔQ" {
                    "delta_attention ΔQ"
                } else {
                    "delta_attention ΔK"
                },
                left: t.shape().to_vec(),
                right: q.shape().to_vec(),
            });
        }
    }
    if q.cols() != k.cols() {
        return Err(Error::DimensionMismatch {
            op: "delta_attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    let q_pert = q.add(dq)?;
    let k_pert = k.add(dk)?;
    let base = q.matmul_nt(k)?;
    let pert = q_pert.matmul_nt(&k_pert)?;
    let mut delta_total = pert;
    for (d, b) in delta_total.data_mut().iter_mut().zip(base.data()) {
        *d -= b;
    }
    let term1 = q.matmul_nt(dk)?;
    let term2 = dq.matmul_nt(k)?;
    let term3 = dq.matmul_nt(dk)?;
    let mut max_residual = 0.0f64;
    let mut max_abs_delta = 0.0f64;
    for i in 0..delta_total.len() {
        let total = delta_total.data()[i];
        let sum = term1.data()[i] + term2.data()[i] + term3.data()[i];
        max_residual = max_residual.max((sum - total).abs());
        max_abs_delta = max_abs_delta.max(total.abs());
    }
    Ok(DeltaAttnDecomposition {
        delta_total,
        term1,
        term2,
        term3,
        max_residual,
        max_abs_delta,
    })
}

/// Zero out everything except the rotary pair of frequency `m`.
pub fn restrict_to_frequency(
    delta: &Tensor<f64>,
    m: usize,
    rope: &RopeConfig,
) -> Result<Tensor<f64>> {
    if m >= rope.n_frequencies() {
        return Err(Error::IndexOutOfRange {
            what: "frequency index",
            index: m,
            limit: rope.n_frequencies(),
        });
    }
    if delta.cols() != rope.head_dim {
        return Err(Error::DimensionMismatch {
            op: "restrict_to_frequency",
            left: delta.shape().to_vec(),
            right: vec![rope.head_dim],
        });
    }
    let (a, b) = rope.pair_indices(m);
    let mut out = Tensor::zeros(delta.shape().to_vec());
    for t in 0..delta.rows() {
        *out.at_mut(t, a) = delta.at(t, a);
        *out.at_mut(t, b) = delta.at(t, b);
    }
    Ok(out)
}

/// Build the decomposition from two captured traces: Q, K are the baseline
/// post-rotation activations of one head; ΔQ, ΔK are the perturbation-induced
/// changes restricted to frequencies `f_q` and `f_k`.
pub fn delta_attn_from_traces<S: Scalar>(
    base: &ForwardTrace<S>,
    perturbed: &ForwardTrace<S>,
    layer: usize,
    head: usize,
    f_q: usize,
    f_k: usize,
    rope: &RopeConfig,
) -> Result<DeltaAttnDecomposition> {
    if base.tokens != perturbed.tokens {
        return Err(Error::TraceMismatch {
            context: "delta-attention traces ran on different inputs".into(),
        });
    }
    let bcap = base.captured()?;
    let pcap = perturbed.captured()?;
    if layer >= bcap.layers.len() {
        return Err(Error::IndexOutOfRange {
            what: "layer",
            index: layer,
            limit: bcap.layers.len(),
        });
    }
    if head >= bcap.layers[layer].q_rot.len() {
        return Err(Error::IndexOutOfRange {
            what: "head",
            index: head,
            limit: bcap.layers[layer].q_rot.len(),
        });
    }
    let q: Tensor<f64> = bcap.layers[layer].q_rot[head].cast();
    let k: Tensor<f64> = bcap.layers[layer].k_rot[head].cast();
    let qp: Tensor<f64> = pcap.layers[layer].q_rot[head].cast();
    let kp: Tensor<f64> = pcap.layers[layer].k_rot[head].cast();
    let mut dq_full = qp;
    for (d, b) in dq_full.data_mut().iter_mut().zip(q.data()) {
        *d -= b;
    }
    let mut dk_full = kp;
    for (d, b) in dk_full.data_mut().iter_mut().zip(k.data()) {
        *d -= b;
    }
    let dq = restrict_to_frequency(&dq_full, f_q, rope)?;
    let dk = restrict_to_frequency(&dk_full, f_k, rope)?;
    delta_attention(&q, &k, &dq, &dk)
}
