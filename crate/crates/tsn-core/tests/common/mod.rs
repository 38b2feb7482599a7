//! Shared fixtures for integration tests: a straight-line reference forward
//! pass written directly from the layer equations (no shared code with the
//! crate), a central finite-difference harness, and coordinate addressing
//! into checkpoints.

#![allow(dead_code)]

use tsn_core::model::{MatrixId, MatrixKind, ModelCheckpoint, Sample};
use tsn_core::rope::RopeLayout;
use tsn_core::{Checkpoint64, ModelConfig};

// ── Independent reference forward ───────────────────────────────────────────
//
// Deliberately written with bare nested loops over Vec<f64>, its own softmax,
// normalizer, activation, and rotation code, so it shares nothing with the
// implementation path it checks.

fn ref_rms_norm(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mut ss = 0.0;
    for v in x {
        ss += v * v;
    }
    let r = (ss / n + 1e-6).sqrt();
    (0..x.len()).map(|i| x[i] / r * g[i]).collect()
}

fn ref_matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for i in 0..rows {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += w[i * cols + j] * x[j];
        }
        y[i] = acc;
    }
    y
}

/// Straight-line forward pass; returns logits for every position.
pub fn reference_forward(ckpt: &Checkpoint64, tokens: &[u32]) -> Vec<Vec<f64>> {
    let cfg = &ckpt.config;
    let (d, dh, nh) = (cfg.d_model, cfg.d_model / cfg.n_heads, cfg.n_heads);
    let t_len = tokens.len();

    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| ckpt.embed.row(t as usize).to_vec())
        .collect();

    for layer in &ckpt.layers {
        // Attention block.
        let h: Vec<Vec<f64>> = x.iter().map(|row| ref_rms_norm(row, &layer.attn_norm)).collect();
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut k: Vec<Vec<f64>> = Vec::new();
        let mut v: Vec<Vec<f64>> = Vec::new();
        for row in &h {
            q.push(ref_matvec(layer.w_q.data(), d, d, row));
            k.push(ref_matvec(layer.w_k.data(), d, d, row));
            v.push(ref_matvec(layer.w_v.data(), d, d, row));
        }
        // Rotary encoding, pair (m, m + dh/2) under half-split or (2m, 2m+1)
        // under interleaved pairing.
        for t in 0..t_len {
            for head in 0..nh {
                for m in 0..dh / 2 {
                    let (ia, ib) = match cfg.rope.layout {
                        RopeLayout::HalfSplit => (head * dh + m, head * dh + m + dh / 2),
                        RopeLayout::InterleavedPairs => (head * dh + 2 * m, head * dh + 2 * m + 1),
                    };
                    let angle = if cfg.rope.enabled {
                        t as f64 * cfg.rope.base.powf(-2.0 * m as f64 / dh as f64)
                    } else {
                        0.0
                    };
                    let (s, c) = (angle.sin(), angle.cos());
                    for arr in [&mut q, &mut k] {
                        let a = arr[t][ia];
                        let b = arr[t][ib];
                        arr[t][ia] = c * a - s * b;
                        arr[t][ib] = s * a + c * b;
                    }
                }
            }
        }
        // Causal attention per head, explicit softmax.
        let mut ctx = vec![vec![0.0; d]; t_len];
        for head in 0..nh {
            let off = head * dh;
            for i in 0..t_len {
                let mut scores = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += q[i][off + c] * k[j][off + c];
                    }
                    scores.push(acc / (dh as f64).sqrt());
                }
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let mut den = 0.0;
                for s in &mut scores {
                    *s = (*s - mx).exp();
                    den += *s;
                }
                for j in 0..=i {
                    let p = scores[j] / den;
                    for c in 0..dh {
                        ctx[i][off + c] += p * v[j][off + c];
                    }
                }
            }
        }
        for t in 0..t_len {
            let proj = ref_matvec(layer.w_o.data(), d, d, &ctx[t]);
            for c in 0..d {
                x[t][c] += proj[c];
            }
        }
        // MLP block.
        for t in 0..t_len {
            let h2 = ref_rms_norm(&x[t], &layer.mlp_norm);
            let gate = ref_matvec(layer.w_gate.data(), cfg.d_ff, d, &h2);
            let up = ref_matvec(layer.w_up.data(), cfg.d_ff, d, &h2);
            let mut a = vec![0.0; cfg.d_ff];
            for f in 0..cfg.d_ff {
                a[f] = gate[f] / (1.0 + (-gate[f]).exp()) * up[f];
            }
            let down = ref_matvec(layer.w_down.data(), d, cfg.d_ff, &a);
            for c in 0..d {
                x[t][c] += down[c];
            }
        }
    }

    x.iter()
        .map(|row| {
            let xn = ref_rms_norm(row, &ckpt.final_norm);
            ref_matvec(ckpt.head.data(), cfg.vocab_size, d, &xn)
        })
        .collect()
}

// ── Parameter coordinate addressing ──────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamCoord {
    Matrix(MatrixId, usize),
    Embed(usize),
    AttnNorm(usize, usize),
    MlpNorm(usize, usize),
    FinalNorm(usize),
    Head(usize),
}

pub fn read_coord(ckpt: &Checkpoint64, coord: ParamCoord) -> f64 {
    match coord {
        ParamCoord::Matrix(id, i) => ckpt.matrix(id).data()[i],
        ParamCoord::Embed(i) => ckpt.embed.data()[i],
        ParamCoord::AttnNorm(l, i) => ckpt.layers[l].attn_norm[i],
        ParamCoord::MlpNorm(l, i) => ckpt.layers[l].mlp_norm[i],
        ParamCoord::FinalNorm(i) => ckpt.final_norm[i],
        ParamCoord::Head(i) => ckpt.head.data()[i],
    }
}

pub fn write_coord(ckpt: &mut Checkpoint64, coord: ParamCoord, value: f64) {
    match coord {
        ParamCoord::Matrix(id, i) => ckpt.matrix_mut(id).data_mut()[i] = value,
        ParamCoord::Embed(i) => ckpt.embed.data_mut()[i] = value,
        ParamCoord::AttnNorm(l, i) => ckpt.layers[l].attn_norm[i] = value,
        ParamCoord::MlpNorm(l, i) => ckpt.layers[l].mlp_norm[i] = value,
        ParamCoord::FinalNorm(i) => ckpt.final_norm[i] = value,
        ParamCoord::Head(i) => ckpt.head.data_mut()[i] = value,
    }
}

/// Central finite difference of the sample loss along one coordinate.
pub fn finite_diff(ckpt: &mut Checkpoint64, sample: &Sample, coord: ParamCoord, eps: f64) -> f64 {
    let orig = read_coord(ckpt, coord);
    write_coord(ckpt, coord, orig + eps);
    let plus = tsn_core::loss(ckpt, &sample.tokens, &sample.targets()).unwrap();
    write_coord(ckpt, coord, orig - eps);
    let minus = tsn_core::loss(ckpt, &sample.tokens, &sample.targets()).unwrap();
    write_coord(ckpt, coord, orig);
    (plus - minus) / (2.0 * eps)
}

/// Gradient-check agreement rule: 1e-4 relative with a 1e-7 absolute floor.
pub fn grads_agree(analytic: f64, numeric: f64) -> bool {
    let abs = (analytic - numeric).abs();
    abs <= 1e-7 || abs <= 1e-4 * analytic.abs().max(numeric.abs())
}

// ── Small model configs for tests ────────────────────────────────────────────

/// The spec'd tiny oracle model: 2 layers, 2 heads, d_model 16, vocab 32.
pub fn oracle_config() -> ModelConfig {
    use tsn_core::data::TokenizerSpec;
    use tsn_core::rope::RopeConfig;
    ModelConfig {
        vocab_size: 32,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 48,
        max_seq_len: 64,
        rope: RopeConfig {
            head_dim: 8,
            base: 50_000.0,
            layout: RopeLayout::HalfSplit,
            enabled: true,
        },
        tokenizer: TokenizerSpec::Word {
            vocab: std::iter::once("<bos>".to_string())
                .chain((0..31).map(|i| format!("w{i}")))
                .collect(),
        },
    }
}

pub fn oracle_checkpoint(seed: u64) -> Checkpoint64 {
    ModelCheckpoint::<f64>::init(&oracle_config(), seed).unwrap()
}

/// Sample a deterministic set of matrix coordinates covering all seven kinds.
pub fn sample_matrix_coords(
    ckpt: &Checkpoint64,
    per_matrix: usize,
    seed: u64,
) -> Vec<ParamCoord> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for layer in 0..ckpt.config.n_layers {
        for kind in MatrixKind::ALL {
            let id = MatrixId::new(layer, kind);
            let len = ckpt.matrix(id).len();
            for _ in 0..per_matrix {
                coords.push(ParamCoord::Matrix(id, rng.random_range(0..len)));
            }
        }
    }
    coords
}
