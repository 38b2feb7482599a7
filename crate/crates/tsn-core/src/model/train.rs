//! Toy training loop: plain Adam over line-delimited corpora, deterministic
//! given the seed. Training quality is not a goal beyond reaching a usable
//! checkpoint for analysis.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TokenizedCorpus;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::backward::{backward_full, FullGrads, Targets};
use super::forward::forward_full;
use super::{ModelCheckpoint, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
        }
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn param_slots_mut<S: Scalar>(ckpt: &mut ModelCheckpoint<S>) -> Vec<&mut [S]> {
    let mut slots: Vec<&mut [S]> = vec![ckpt.embed.data_mut()];
    for layer in &mut ckpt.layers {
        slots.push(&mut layer.attn_norm);
        slots.push(layer.w_q.data_mut());
        slots.push(layer.w_k.data_mut());
        slots.push(layer.w_v.data_mut());
        slots.push(layer.w_o.data_mut());
        slots.push(layer.w_gate.data_mut());
        slots.push(layer.w_up.data_mut());
        slots.push(layer.w_down.data_mut());
        slots.push(&mut layer.mlp_norm);
    }
    slots.push(&mut ckpt.final_norm);
    slots.push(ckpt.head.data_mut());
    slots
}

/// Train a freshly initialized checkpoint on a line corpus with all-token
/// loss. `steps == 0` returns the seeded initialization unchanged. The final
/// step's batch loss is recorded in the checkpoint manifest.
pub fn train_toy<S: Scalar>(
    config: &ModelConfig,
    train: &TrainConfig,
    corpus: &TokenizedCorpus,
    steps: usize,
    seed: u64,
) -> Result<ModelCheckpoint<S>> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset { op: "train_toy" });
    }
    let mut ckpt = ModelCheckpoint::<S>::init(config, seed)?;
    if steps == 0 {
        return Ok(ckpt);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e);
    let mut adam: Option<AdamState> = None;
    let mut last_loss = f64::NAN;

    for step in 1..=steps {
        let mut batch_grads: Option<FullGrads> = None;
        let mut batch_loss = 0.0;
        let scale = 1.0 / train.batch_size as f64;
        for _ in 0..train.batch_size {
            let line = &corpus.lines[rng.random_range(0..corpus.lines.len())];
            let acts = forward_full(&ckpt, line)?;
            let (loss, grads) = backward_full(&ckpt, &acts, &Targets::AllTokens(&line[1..]))?;
            batch_loss += loss * scale;
            match &mut batch_grads {
                Some(acc) => acc.accumulate(&grads, scale),
                None => {
                    let mut acc = grads;
                    scale_grads(&mut acc, scale);
                    batch_grads = Some(acc);
                }
            }
        }
        let grads = batch_grads.expect("batch_size > 0");
        last_loss = batch_loss;

        let grad_slots = grads.slots();
        let state = adam.get_or_insert_with(|| AdamState {
            m: grad_slots.iter().map(|g| vec![0.0; g.len()]).collect(),
            v: grad_slots.iter().map(|g| vec![0.0; g.len()]).collect(),
        });
        let bc1 = 1.0 - train.beta1.powi(step as i32);
        let bc2 = 1.0 - train.beta2.powi(step as i32);
        let params = param_slots_mut(&mut ckpt);
        debug_assert_eq!(params.len(), grad_slots.len());
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(&grad_slots)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = train.beta1 * m[i] + (1.0 - train.beta1) * g;
                v[i] = train.beta2 * v[i] + (1.0 - train.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = param[i].as_f64() - train.lr * m_hat / (v_hat.sqrt() + train.eps);
                param[i] = S::of_f64(p);
            }
        }
    }

    ckpt.meta.steps = steps;
    ckpt.meta.seed = seed;
    ckpt.meta.final_loss = Some(last_loss);
    Ok(ckpt)
}

fn scale_grads(grads: &mut FullGrads, scale: f64) {
    fn sc(v: &mut [f64], s: f64) {
        for x in v {
            *x *= s;
        }
    }
    sc(&mut grads.embed, scale);
    for l in &mut grads.layers {
        sc(&mut l.attn_norm, scale);
        for m in &mut l.matrices {
            sc(m, scale);
        }
        sc(&mut l.mlp_norm, scale);
    }
    sc(&mut grads.final_norm, scale);
    sc(&mut grads.head, scale);
}

/// Mean all-token loss over every line of a corpus, for progress reporting.
pub fn corpus_loss<S: Scalar>(ckpt: &ModelCheckpoint<S>, corpus: &TokenizedCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset { op: "corpus_loss" });
    }
    let mut total = 0.0;
    for line in &corpus.lines {
        total += super::backward::loss(ckpt, line, &Targets::AllTokens(&line[1..]))?;
    }
    Ok(total / corpus.lines.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_test_config;

    fn corpus(cfg: &crate::model::ModelConfig) -> TokenizedCorpus {
        let text = "w0 w1 w2 w3\nw1 w2 w3 w4\nw2 w3 w4 w5\n";
        TokenizedCorpus::from_text(text, &cfg.tokenizer, cfg.max_seq_len).unwrap()
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = tiny_test_config();
        let c = corpus(&cfg);
        let trained = train_toy::<f32>(&cfg, &TrainConfig::default(), &c, 0, 9).unwrap();
        let init = ModelCheckpoint::<f32>::init(&cfg, 9).unwrap();
        assert_eq!(trained.fingerprint(), init.fingerprint());
        assert_eq!(trained.meta.final_loss, None);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = tiny_test_config();
        let c = corpus(&cfg);
        let tc = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train_toy::<f32>(&cfg, &tc, &c, 20, 5).unwrap();
        let b = train_toy::<f32>(&cfg, &tc, &c, 20, 5).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.meta.final_loss, b.meta.final_loss);
    }

    #[test]
    fn loss_decreases_on_repetitive_corpus() {
        let cfg = tiny_test_config();
        let c = corpus(&cfg);
        let tc = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let init = ModelCheckpoint::<f32>::init(&cfg, 11).unwrap();
        let loss0 = corpus_loss(&init, &c).unwrap();
        let trained = train_toy::<f32>(&cfg, &tc, &c, 150, 11).unwrap();
        let loss1 = corpus_loss(&trained, &c).unwrap();
        assert!(loss1 < loss0, "loss did not decrease: {loss0} -> {loss1}");
    }

    #[test]
    fn empty_corpus_is_error() {
        let cfg = tiny_test_config();
        let empty = TokenizedCorpus::from_text("", &cfg.tokenizer, 16).unwrap();
        assert!(matches!(
            train_toy::<f32>(&cfg, &TrainConfig::default(), &empty, 5, 1),
            Err(Error::EmptyDataset { .. })
        ));
    }
}
