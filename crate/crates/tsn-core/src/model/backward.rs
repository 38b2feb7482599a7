//! Loss and hand-derived reverse-mode gradients.
//!
//! The backward pass runs entirely in f64 regardless of storage precision;
//! parameter gradients are rounded to storage precision only at the public
//! boundary. A finite-difference oracle certifies every path (see the
//! gradient tests and the acceptance suite).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::rotate_head_vector;
use crate::scalar::Scalar;
use crate::tensor::{sigmoid, Tensor};

use super::forward::{forward_full, FullActivations};
use super::{MatrixKind, ModelCheckpoint, PerMatrix, RMS_EPS};

/// Which positions contribute to the scalar loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Cross-entropy at the final position only.
    FinalToken,
    /// Mean cross-entropy of next-token prediction over all positions.
    AllTokens,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossMode::FinalToken => f.write_str("final-token"),
            LossMode::AllTokens => f.write_str("all-tokens"),
        }
    }
}

/// Loss targets, aligned to the input tokens.
#[derive(Debug, Clone)]
pub enum Targets<'a> {
    /// `targets[t]` is the expected token after position `t`; length must be
    /// `tokens.len() − 1`.
    AllTokens(&'a [u32]),
    /// Single target predicted at the final position.
    FinalToken(u32),
}

impl Targets<'_> {
    pub fn mode(&self) -> LossMode {
        match self {
            Targets::AllTokens(_) => LossMode::AllTokens,
            Targets::FinalToken(_) => LossMode::FinalToken,
        }
    }
}

/// One scored example: a token sequence plus its target specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub target: SampleTarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleTarget {
    /// Language-modeling: each position predicts the next token.
    Next,
    /// A single held-out token predicted after the final position.
    Final(u32),
}

impl Sample {
    pub fn lm(tokens: Vec<u32>) -> Self {
        Sample {
            tokens,
            target: SampleTarget::Next,
        }
    }

    pub fn final_token(tokens: Vec<u32>, target: u32) -> Self {
        Sample {
            tokens,
            target: SampleTarget::Final(target),
        }
    }

    pub fn loss_mode(&self) -> LossMode {
        match self.target {
            SampleTarget::Next => LossMode::AllTokens,
            SampleTarget::Final(_) => LossMode::FinalToken,
        }
    }

    pub fn targets(&self) -> Targets<'_> {
        match &self.target {
            SampleTarget::Next => Targets::AllTokens(&self.tokens[1..]),
            SampleTarget::Final(t) => Targets::FinalToken(*t),
        }
    }
}

/// Gradients of the seven named matrices per layer, shape-matched.
#[derive(Debug, Clone)]
pub struct PerSampleGradient<S> {
    pub loss: f64,
    pub loss_mode: LossMode,
    pub matrices: PerMatrix<Tensor<S>>,
}

/// Gradients for every trainable parameter, in f64 (internal; training and
/// the finite-difference harness consume these directly).
#[derive(Debug, Clone)]
pub struct FullGrads {
    pub embed: Vec<f64>,
    pub layers: Vec<LayerGrads>,
    pub final_norm: Vec<f64>,
    pub head: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub attn_norm: Vec<f64>,
    /// Indexed by `MatrixKind::index()`.
    pub matrices: [Vec<f64>; 7],
    pub mlp_norm: Vec<f64>,
}

impl FullGrads {
    fn zeros<S: Scalar>(ckpt: &ModelCheckpoint<S>) -> Self {
        let cfg = &ckpt.config;
        FullGrads {
            embed: vec![0.0; cfg.vocab_size * cfg.d_model],
            layers: (0..cfg.n_layers)
                .map(|_| LayerGrads {
                    attn_norm: vec![0.0; cfg.d_model],
                    matrices: std::array::from_fn(|i| {
                        let (r, c) = cfg.matrix_shape(MatrixKind::ALL[i]);
                        vec![0.0; r * c]
                    }),
                    mlp_norm: vec![0.0; cfg.d_model],
                })
                .collect(),
            final_norm: vec![0.0; cfg.d_model],
            head: vec![0.0; cfg.vocab_size * cfg.d_model],
        }
    }

    /// Parameter slots in canonical traversal order (matches
    /// `ModelCheckpoint` / the Adam state layout).
    pub fn slots(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embed];
        for l in &self.layers {
            out.push(&l.attn_norm);
            for m in &l.matrices {
                out.push(m);
            }
            out.push(&l.mlp_norm);
        }
        out.push(&self.final_norm);
        out.push(&self.head);
        out
    }

    pub fn accumulate(&mut self, other: &FullGrads, scale: f64) {
        fn acc(a: &mut [f64], b: &[f64], s: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * s;
            }
        }
        acc(&mut self.embed, &other.embed, scale);
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            acc(&mut l.attn_norm, &o.attn_norm, scale);
            for (m, om) in l.matrices.iter_mut().zip(&o.matrices) {
                acc(m, om, scale);
            }
            acc(&mut l.mlp_norm, &o.mlp_norm, scale);
        }
        acc(&mut self.final_norm, &other.final_norm, scale);
        acc(&mut self.head, &other.head, scale);
    }
}

// ── f64 working matrices ─────────────────────────────────────────────────────

#[derive(Clone)]
struct M {
    r: usize,
    c: usize,
    v: Vec<f64>,
}

impl M {
    fn zeros(r: usize, c: usize) -> M {
        M {
            r,
            c,
            v: vec![0.0; r * c],
        }
    }

    fn of<S: Scalar>(t: &Tensor<S>) -> M {
        M {
            r: t.rows(),
            c: t.cols(),
            v: t.data().iter().map(|x| x.as_f64()).collect(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.c + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.c..(i + 1) * self.c]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.v[i * self.c..(i + 1) * self.c]
    }

    /// self (r×c) · other (c×n) → r×n
    fn mul_nn(&self, other: &M) -> M {
        assert_eq!(self.c, other.r);
        let mut out = M::zeros(self.r, other.c);
        for i in 0..self.r {
            for k in 0..self.c {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (j, b) in brow.iter().enumerate() {
                    orow[j] += a * b;
                }
            }
        }
        out
    }

    /// selfᵀ (c×r) · other (r→ rows must match) → c×n
    fn mul_tn(&self, other: &M) -> M {
        assert_eq!(self.r, other.r);
        let mut out = M::zeros(self.c, other.c);
        for k in 0..self.r {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, a) in arow.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let orow = out.row_mut(i);
                for (j, b) in brow.iter().enumerate() {
                    orow[j] += a * b;
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &M) {
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            *a += b;
        }
    }
}

/// Backward through `y = rmsnorm(x) ⊙ g` given dL/dy. Returns dL/dx and
/// accumulates dL/dg.
fn rms_norm_backward(x: &M, g: &[f64], dy: &M, dg: &mut [f64]) -> M {
    let n = x.c as f64;
    let mut dx = M::zeros(x.r, x.c);
    for t in 0..x.r {
        let xr = x.row(t);
        let dyr = dy.row(t);
        let mut ms = 0.0;
        for v in xr {
            ms += v * v;
        }
        let r = (ms / n + RMS_EPS).sqrt();
        let mut inner = 0.0;
        for i in 0..x.c {
            dg[i] += dyr[i] * xr[i] / r;
            inner += dyr[i] * g[i] * xr[i];
        }
        let dxr = dx.row_mut(t);
        for j in 0..x.c {
            dxr[j] = dyr[j] * g[j] / r - xr[j] * inner / (n * r * r * r);
        }
    }
    dx
}

fn select_positions(t_len: usize, targets: &Targets<'_>) -> Result<Vec<(usize, u32)>> {
    match targets {
        Targets::AllTokens(ts) => {
            if ts.len() + 1 != t_len {
                return Err(Error::AlignmentMismatch {
                    tokens: t_len,
                    targets: ts.len(),
                });
            }
            Ok(ts.iter().enumerate().map(|(t, &y)| (t, y)).collect())
        }
        Targets::FinalToken(y) => Ok(vec![(t_len - 1, *y)]),
    }
}

/// Mean cross-entropy over the selected positions.
pub fn loss<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    tokens: &[u32],
    targets: &Targets<'_>,
) -> Result<f64> {
    let acts = forward_full(ckpt, tokens)?;
    loss_from_logits(&acts.logits, targets, ckpt.config.vocab_size)
}

fn loss_from_logits<S: Scalar>(
    logits: &Tensor<S>,
    targets: &Targets<'_>,
    vocab: usize,
) -> Result<f64> {
    let sel = select_positions(logits.rows(), targets)?;
    let w = 1.0 / sel.len() as f64;
    let mut total = 0.0;
    for (t, y) in sel {
        if y as usize >= vocab {
            return Err(Error::TokenOutOfRange { id: y, vocab });
        }
        total += w * crate::tensor::cross_entropy(logits.row(t), y as usize)?;
    }
    Ok(total)
}

/// Full backward pass; returns the loss and gradients for every parameter.
pub(crate) fn backward_full<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    acts: &FullActivations<S>,
    targets: &Targets<'_>,
) -> Result<(f64, FullGrads)> {
    let cfg = &ckpt.config;
    let (t_len, d, dh, n_heads) = (acts.tokens.len(), cfg.d_model, cfg.head_dim(), cfg.n_heads);
    let sel = select_positions(t_len, targets)?;
    let w = 1.0 / sel.len() as f64;

    let mut grads = FullGrads::zeros(ckpt);

    // Loss head: dlogits = w · (softmax − onehot) at selected positions.
    let logits = M::of(&acts.logits);
    let mut dlogits = M::zeros(t_len, cfg.vocab_size);
    let mut total_loss = 0.0;
    for &(t, y) in &sel {
        if y as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: y,
                vocab: cfg.vocab_size,
            });
        }
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        total_loss += w * (lse - row[y as usize]);
        let drow = dlogits.row_mut(t);
        for (j, v) in row.iter().enumerate() {
            drow[j] = w * (v - lse).exp();
        }
        drow[y as usize] -= w;
    }

    // Output head: logits = x_normed · headᵀ.
    let x_normed = M::of(&acts.x_normed);
    let head = M::of(&ckpt.head);
    grads.head = dlogits.mul_tn(&x_normed).v;
    let d_x_normed = dlogits.mul_nn(&head);

    // Final RMS norm.
    let x_final = M::of(&acts.x_final);
    let g_final: Vec<f64> = ckpt.final_norm.iter().map(|v| v.as_f64()).collect();
    let mut dx = rms_norm_backward(&x_final, &g_final, &d_x_normed, &mut grads.final_norm);

    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
    for (li, (layer, la)) in ckpt.layers.iter().zip(&acts.layers).enumerate().rev() {
        let lg = &mut grads.layers[li];

        // ── MLP block: x_out = x_mid + (silu(gate_pre) ⊙ up) · w_downᵀ ──
        let d_mlp_out = dx.clone();
        let mut dx_mid = dx; // residual path
        let act = M::of(&la.act);
        let w_down = M::of(&layer.w_down);
        lg.matrices[MatrixKind::Down.index()] = d_mlp_out.mul_tn(&act).v;
        let da = d_mlp_out.mul_nn(&w_down);

        let gate_pre = M::of(&la.gate_pre);
        let up = M::of(&la.up);
        let mut du = M::zeros(t_len, cfg.d_ff);
        let mut dup = M::zeros(t_len, cfg.d_ff);
        for i in 0..t_len * cfg.d_ff {
            let u = gate_pre.v[i];
            let sig = sigmoid(u);
            let si = u * sig;
            dup.v[i] = da.v[i] * si;
            du.v[i] = da.v[i] * up.v[i] * sig * (1.0 + u * (1.0 - sig));
        }
        let h_mlp = M::of(&la.h_mlp);
        lg.matrices[MatrixKind::Gate.index()] = du.mul_tn(&h_mlp).v;
        lg.matrices[MatrixKind::Up.index()] = dup.mul_tn(&h_mlp).v;
        let w_gate = M::of(&layer.w_gate);
        let w_up = M::of(&layer.w_up);
        let mut dh_mlp = du.mul_nn(&w_gate);
        dh_mlp.add_assign(&dup.mul_nn(&w_up));

        let x_mid = M::of(&la.x_mid);
        let g_mlp: Vec<f64> = layer.mlp_norm.iter().map(|v| v.as_f64()).collect();
        dx_mid.add_assign(&rms_norm_backward(&x_mid, &g_mlp, &dh_mlp, &mut lg.mlp_norm));

        // ── Attention block: x_mid = x_in + ctx · w_oᵀ ──
        let d_attn_proj = dx_mid.clone();
        let mut dx_in = dx_mid; // residual path
        let ctx = M::of(&la.ctx);
        lg.matrices[MatrixKind::O.index()] = d_attn_proj.mul_tn(&ctx).v;
        let w_o = M::of(&layer.w_o);
        let dctx = d_attn_proj.mul_nn(&w_o);

        let q_rot = M::of(&la.q_rot);
        let k_rot = M::of(&la.k_rot);
        let v_full = M::of(&la.v);
        let mut dq = M::zeros(t_len, d);
        let mut dk = M::zeros(t_len, d);
        let mut dv = M::zeros(t_len, d);
        for h in 0..n_heads {
            let base = h * dh;
            let attn = M::of(&la.attn[h]);
            // dA_ij = dctx_i · v_j ; dv_j = Σ_i A_ij dctx_i  (head columns only)
            let mut d_attn = M::zeros(t_len, t_len);
            for i in 0..t_len {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += dctx.at(i, base + c) * v_full.at(j, base + c);
                    }
                    d_attn.v[i * t_len + j] = acc;
                }
            }
            for j in 0..t_len {
                for c in 0..dh {
                    let mut acc = 0.0;
                    for i in j..t_len {
                        acc += attn.at(i, j) * dctx.at(i, base + c);
                    }
                    dv.v[j * d + base + c] += acc;
                }
            }
            // Softmax backward, causal rows.
            let mut d_scores = M::zeros(t_len, t_len);
            for i in 0..t_len {
                let mut dot = 0.0;
                for j in 0..=i {
                    dot += attn.at(i, j) * d_attn.at(i, j);
                }
                for j in 0..=i {
                    d_scores.v[i * t_len + j] = attn.at(i, j) * (d_attn.at(i, j) - dot);
                }
            }
            // dq̃_i = Σ_j ds_ij k̃_j / √dh ; dk̃_j = Σ_i ds_ij q̃_i / √dh
            let mut dq_rot = M::zeros(t_len, dh);
            let mut dk_rot = M::zeros(t_len, dh);
            for i in 0..t_len {
                for j in 0..=i {
                    let s = d_scores.at(i, j) * inv_sqrt_dh;
                    if s == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq_rot.v[i * dh + c] += s * k_rot.at(j, base + c);
                        dk_rot.v[j * dh + c] += s * q_rot.at(i, base + c);
                    }
                }
            }
            // Un-rotate (inverse rotation transposes M(p, m)).
            for t in 0..t_len {
                rotate_head_vector(dq_rot.row_mut(t), t, &cfg.rope, -1.0);
                rotate_head_vector(dk_rot.row_mut(t), t, &cfg.rope, -1.0);
                for c in 0..dh {
                    dq.v[t * d + base + c] += dq_rot.at(t, c);
                    dk.v[t * d + base + c] += dk_rot.at(t, c);
                }
            }
        }

        let h_attn = M::of(&la.h_attn);
        lg.matrices[MatrixKind::Q.index()] = dq.mul_tn(&h_attn).v;
        lg.matrices[MatrixKind::K.index()] = dk.mul_tn(&h_attn).v;
        lg.matrices[MatrixKind::V.index()] = dv.mul_tn(&h_attn).v;
        let mut dh_attn = dq.mul_nn(&M::of(&layer.w_q));
        dh_attn.add_assign(&dk.mul_nn(&M::of(&layer.w_k)));
        dh_attn.add_assign(&dv.mul_nn(&M::of(&layer.w_v)));

        let x_in = M::of(&la.x_in);
        let g_attn: Vec<f64> = layer.attn_norm.iter().map(|v| v.as_f64()).collect();
        dx_in.add_assign(&rms_norm_backward(&x_in, &g_attn, &dh_attn, &mut lg.attn_norm));

        dx = dx_in;
    }

    // Embedding rows.
    for (t, &tok) in acts.tokens.iter().enumerate() {
        let row = dx.row(t);
        let dst = &mut grads.embed[tok as usize * d..(tok as usize + 1) * d];
        for (a, b) in dst.iter_mut().zip(row) {
            *a += b;
        }
    }

    Ok((total_loss, grads))
}

/// Analytic gradient of the per-sample loss with respect to the seven named
/// matrices of every layer. Embeddings, norms, and the output head are not
/// part of the sensitivity surface.
pub fn per_sample_grad<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    sample: &Sample,
) -> Result<PerSampleGradient<S>> {
    let acts = forward_full(ckpt, &sample.tokens)?;
    let (loss, grads) = backward_full(ckpt, &acts, &sample.targets())?;
    let matrices = PerMatrix::from_fn(ckpt.config.n_layers, |id| {
        let (r, c) = ckpt.config.matrix_shape(id.kind);
        Tensor::new(
            vec![r, c],
            grads.layers[id.layer].matrices[id.kind.index()]
                .iter()
                .map(|&g| S::of_f64(g))
                .collect(),
        )
        .unwrap()
    });
    Ok(PerSampleGradient {
        loss,
        loss_mode: sample.loss_mode(),
        matrices,
    })
}

/// Full-parameter backward used by training and the gradient-check harness.
pub fn loss_and_full_grads<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    sample: &Sample,
) -> Result<(f64, FullGrads)> {
    let acts = forward_full(ckpt, &sample.tokens)?;
    backward_full(ckpt, &acts, &sample.targets())
}
