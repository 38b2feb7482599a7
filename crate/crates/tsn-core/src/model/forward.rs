//! Forward pass with optional activation capture.
//!
//! Pre-norm blocks: `x + attn(rmsnorm(x))` then `x + mlp(rmsnorm(x))`, RoPE
//! applied to Q and K per head, causal softmax attention, SiLU-gated MLP.
//! All reductions accumulate in f64 in a fixed order, so a forward pass over
//! the same checkpoint and input is bit-identical.

use crate::error::{Error, Result};
use crate::rope::rotate_head_vector;
use crate::scalar::Scalar;
use crate::tensor::{argmax, log_softmax, rms_norm, sigmoid, Tensor};

use super::{ModelCheckpoint, RMS_EPS};

/// Per-layer, per-head activations captured during a forward pass.
#[derive(Debug, Clone)]
pub struct LayerCapture<S> {
    /// Per head, T × head_dim, before rotary encoding.
    pub q_pre: Vec<Tensor<S>>,
    pub k_pre: Vec<Tensor<S>>,
    /// Per head, T × head_dim, after rotary encoding.
    pub q_rot: Vec<Tensor<S>>,
    pub k_rot: Vec<Tensor<S>>,
    /// Per head, T × T attention probabilities (rows sum to 1, strictly
    /// causal: zero above the diagonal).
    pub attn: Vec<Tensor<S>>,
}

#[derive(Debug, Clone)]
pub struct Captured<S> {
    pub layers: Vec<LayerCapture<S>>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pub tokens: Vec<u32>,
    /// Logits for every position, T × vocab.
    pub logits: Tensor<S>,
    /// Log-likelihood of `tokens[t+1]` at position `t`, length T−1.
    pub next_logprob: Vec<f64>,
    pub captured: Option<Captured<S>>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn final_logits(&self) -> &[S] {
        self.logits.row(self.logits.rows() - 1)
    }

    pub fn captured(&self) -> Result<&Captured<S>> {
        self.captured.as_ref().ok_or(Error::TraceNotCaptured)
    }
}

/// Everything the backward pass needs, retained per layer.
pub(crate) struct LayerActs<S> {
    pub x_in: Tensor<S>,
    pub h_attn: Tensor<S>,
    pub q: Tensor<S>,
    pub k: Tensor<S>,
    pub v: Tensor<S>,
    pub q_rot: Tensor<S>,
    pub k_rot: Tensor<S>,
    pub attn: Vec<Tensor<S>>,
    pub ctx: Tensor<S>,
    pub x_mid: Tensor<S>,
    pub h_mlp: Tensor<S>,
    pub gate_pre: Tensor<S>,
    pub up: Tensor<S>,
    pub act: Tensor<S>,
}

pub(crate) struct FullActivations<S> {
    pub tokens: Vec<u32>,
    pub layers: Vec<LayerActs<S>>,
    pub x_final: Tensor<S>,
    pub x_normed: Tensor<S>,
    pub logits: Tensor<S>,
}

fn validate_tokens<S: Scalar>(ckpt: &ModelCheckpoint<S>, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyDataset { op: "forward" });
    }
    if tokens.len() > ckpt.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: ckpt.config.max_seq_len,
        });
    }
    for &t in tokens {
        if t as usize >= ckpt.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: t,
                vocab: ckpt.config.vocab_size,
            });
        }
    }
    Ok(())
}

fn rms_norm_rows<S: Scalar>(x: &Tensor<S>, scale: &[S]) -> Tensor<S> {
    let rows: Vec<Vec<S>> = (0..x.rows())
        .map(|t| rms_norm(x.row(t), scale, RMS_EPS))
        .collect();
    Tensor::from_rows(&rows)
}

/// Apply rotary encoding per head to a T × d_model activation matrix.
fn apply_rope<S: Scalar>(x: &Tensor<S>, ckpt: &ModelCheckpoint<S>) -> Tensor<S> {
    let cfg = &ckpt.config;
    let dh = cfg.head_dim();
    let mut out = x.clone();
    let mut buf = vec![0.0f64; dh];
    for t in 0..x.rows() {
        for h in 0..cfg.n_heads {
            let base = h * dh;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = out.at(t, base + i).as_f64();
            }
            rotate_head_vector(&mut buf, t, &cfg.rope, 1.0);
            for (i, b) in buf.iter().enumerate() {
                *out.at_mut(t, base + i) = S::of_f64(*b);
            }
        }
    }
    out
}

/// Causal softmax attention for one head. Returns (probabilities, context).
fn head_attention<S: Scalar>(
    q_rot: &Tensor<S>,
    k_rot: &Tensor<S>,
    v: &Tensor<S>,
    head: usize,
    dh: usize,
) -> (Tensor<S>, Vec<Vec<S>>) {
    let t_len = q_rot.rows();
    let base = head * dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = Tensor::<S>::zeros(vec![t_len, t_len]);
    let mut ctx = vec![vec![S::zero(); dh]; t_len];
    for i in 0..t_len {
        let mut scores = vec![0.0f64; i + 1];
        for (j, s) in scores.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for c in 0..dh {
                acc += q_rot.at(i, base + c).as_f64() * k_rot.at(j, base + c).as_f64();
            }
            *s = acc * scale;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0f64;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            *probs.at_mut(i, j) = S::of_f64(s / sum);
        }
        for c in 0..dh {
            let mut acc = 0.0f64;
            for (j, s) in scores.iter().enumerate() {
                acc += (s / sum) * v.at(j, base + c).as_f64();
            }
            ctx[i][c] = S::of_f64(acc);
        }
    }
    (probs, ctx)
}

pub(crate) fn forward_full<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    tokens: &[u32],
) -> Result<FullActivations<S>> {
    validate_tokens(ckpt, tokens)?;
    let cfg = &ckpt.config;
    let (t_len, d, dh) = (tokens.len(), cfg.d_model, cfg.head_dim());

    let mut x = Tensor::<S>::zeros(vec![t_len, d]);
    for (t, &tok) in tokens.iter().enumerate() {
        x.row_mut(t).copy_from_slice(ckpt.embed.row(tok as usize));
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &ckpt.layers {
        let x_in = x;
        let h_attn = rms_norm_rows(&x_in, &layer.attn_norm);
        let q = h_attn.matmul_nt(&layer.w_q)?;
        let k = h_attn.matmul_nt(&layer.w_k)?;
        let v = h_attn.matmul_nt(&layer.w_v)?;
        let q_rot = apply_rope(&q, ckpt);
        let k_rot = apply_rope(&k, ckpt);

        let mut attn = Vec::with_capacity(cfg.n_heads);
        let mut ctx = Tensor::<S>::zeros(vec![t_len, d]);
        for h in 0..cfg.n_heads {
            let (probs, head_ctx) = head_attention(&q_rot, &k_rot, &v, h, dh);
            for (t, row) in head_ctx.iter().enumerate() {
                ctx.row_mut(t)[h * dh..(h + 1) * dh].copy_from_slice(row);
            }
            attn.push(probs);
        }
        let attn_proj = ctx.matmul_nt(&layer.w_o)?;
        let x_mid = x_in.add(&attn_proj)?;

        let h_mlp = rms_norm_rows(&x_mid, &layer.mlp_norm);
        let gate_pre = h_mlp.matmul_nt(&layer.w_gate)?;
        let up = h_mlp.matmul_nt(&layer.w_up)?;
        let mut act = Tensor::<S>::zeros(vec![t_len, cfg.d_ff]);
        for i in 0..t_len * cfg.d_ff {
            let u = gate_pre.data()[i].as_f64();
            act.data_mut()[i] = S::of_f64(u * sigmoid(u) * up.data()[i].as_f64());
        }
        let mlp_out = act.matmul_nt(&layer.w_down)?;
        let x_out = x_mid.add(&mlp_out)?;

        layers.push(LayerActs {
            x_in,
            h_attn,
            q,
            k,
            v,
            q_rot,
            k_rot,
            attn,
            ctx,
            x_mid,
            h_mlp,
            gate_pre,
            up,
            act,
        });
        x = x_out;
    }

    let x_final = x;
    let x_normed = rms_norm_rows(&x_final, &ckpt.final_norm);
    let logits = x_normed.matmul_nt(&ckpt.head)?;

    Ok(FullActivations {
        tokens: tokens.to_vec(),
        layers,
        x_final,
        x_normed,
        logits,
    })
}

fn head_slice<S: Scalar>(full: &Tensor<S>, head: usize, dh: usize) -> Tensor<S> {
    let rows: Vec<Vec<S>> = (0..full.rows())
        .map(|t| full.row(t)[head * dh..(head + 1) * dh].to_vec())
        .collect();
    Tensor::from_rows(&rows)
}

/// Run the decoder over a token sequence.
///
/// The trace always carries per-position logits and next-token
/// log-likelihoods; per-head Q/K (pre and post rotation) and attention
/// probability matrices are retained only when `capture` is set.
pub fn forward<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    tokens: &[u32],
    capture: bool,
) -> Result<ForwardTrace<S>> {
    let acts = forward_full(ckpt, tokens)?;
    let dh = ckpt.config.head_dim();
    let captured = capture.then(|| Captured {
        layers: acts
            .layers
            .iter()
            .map(|l| LayerCapture {
                q_pre: (0..ckpt.config.n_heads)
                    .map(|h| head_slice(&l.q, h, dh))
                    .collect(),
                k_pre: (0..ckpt.config.n_heads)
                    .map(|h| head_slice(&l.k, h, dh))
                    .collect(),
                q_rot: (0..ckpt.config.n_heads)
                    .map(|h| head_slice(&l.q_rot, h, dh))
                    .collect(),
                k_rot: (0..ckpt.config.n_heads)
                    .map(|h| head_slice(&l.k_rot, h, dh))
                    .collect(),
                attn: l.attn.clone(),
            })
            .collect(),
    });
    let next_logprob = (0..tokens.len().saturating_sub(1))
        .map(|t| log_softmax(acts.logits.row(t))[tokens[t + 1] as usize])
        .collect();
    Ok(ForwardTrace {
        tokens: acts.tokens,
        logits: acts.logits,
        next_logprob,
        captured,
    })
}

/// Greedy decoding: append argmax tokens until `max_new` tokens are generated
/// or the sequence hits the model's context limit. Returns only the newly
/// generated tokens.
pub fn greedy_continue<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    prompt: &[u32],
    max_new: usize,
) -> Result<Vec<u32>> {
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        if seq.len() >= ckpt.config.max_seq_len {
            break;
        }
        let acts = forward_full(ckpt, &seq)?;
        let next = argmax(acts.logits.row(seq.len() - 1)) as u32;
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_test_config;

    #[test]
    fn single_token_attention_is_one() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 1).unwrap();
        let trace = forward(&ckpt, &[3], true).unwrap();
        let cap = trace.captured().unwrap();
        for layer in &cap.layers {
            for attn in &layer.attn {
                assert_eq!(attn.shape(), [1, 1]);
                assert_eq!(attn.at(0, 0), 1.0);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_causal() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 2).unwrap();
        let trace = forward(&ckpt, &[1, 5, 9, 2, 30], true).unwrap();
        for layer in &trace.captured().unwrap().layers {
            for attn in &layer.attn {
                for i in 0..attn.rows() {
                    let sum: f64 = attn.row(i).iter().map(|v| f64::from(*v)).sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                    for j in i + 1..attn.cols() {
                        assert_eq!(attn.at(i, j), 0.0, "future leak at ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 3).unwrap();
        let a = forward(&ckpt, &[1, 2, 3, 4], false).unwrap();
        let b = forward(&ckpt, &[1, 2, 3, 4], false).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn causality_bit_exact() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 4).unwrap();
        let a = forward(&ckpt, &[1, 2, 3, 4, 5], false).unwrap();
        let b = forward(&ckpt, &[1, 2, 3, 9, 5], false).unwrap();
        // Changing token 3 must not change logits at positions 0..3.
        for t in 0..3 {
            assert_eq!(a.logits.row(t), b.logits.row(t), "position {t} leaked");
        }
        assert_ne!(a.logits.row(3), b.logits.row(3));
    }

    #[test]
    fn rejects_bad_tokens_and_long_sequences() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 5).unwrap();
        assert!(matches!(
            forward(&ckpt, &[99], false),
            Err(Error::TokenOutOfRange { .. })
        ));
        let long = vec![1u32; ckpt.config.max_seq_len + 1];
        assert!(matches!(
            forward(&ckpt, &long, false),
            Err(Error::SequenceTooLong { .. })
        ));
    }
}
