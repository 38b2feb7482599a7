//! The toy decoder: a minimal pre-norm transformer with RoPE attention and a
//! SiLU-gated MLP, plus full activation capture and hand-derived backprop.

mod backward;
mod forward;
mod train;

pub use backward::{
    loss, loss_and_full_grads, per_sample_grad, FullGrads, LayerGrads, LossMode,
    PerSampleGradient, Sample, SampleTarget, Targets,
};
pub use forward::{forward, greedy_continue, Captured, ForwardTrace, LayerCapture};
pub use train::{corpus_loss, train_toy, TrainConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TokenizerSpec;
use crate::error::{Error, Result};
use crate::rope::RopeConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Epsilon inside the RMS normalizer.
pub const RMS_EPS: f64 = 1e-6;

/// The seven per-layer weight matrices that form the sensitivity surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 7] = [
        MatrixKind::Q,
        MatrixKind::K,
        MatrixKind::V,
        MatrixKind::O,
        MatrixKind::Gate,
        MatrixKind::Up,
        MatrixKind::Down,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatrixKind::Q => "w_q",
            MatrixKind::K => "w_k",
            MatrixKind::V => "w_v",
            MatrixKind::O => "w_o",
            MatrixKind::Gate => "w_gate",
            MatrixKind::Up => "w_up",
            MatrixKind::Down => "w_down",
        }
    }

    pub fn from_name(name: &str) -> Option<MatrixKind> {
        MatrixKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn index(self) -> usize {
        MatrixKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

impl std::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Address of one weight matrix inside a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatrixId {
    pub layer: usize,
    pub kind: MatrixKind,
}

impl MatrixId {
    pub fn new(layer: usize, kind: MatrixKind) -> Self {
        MatrixId { layer, kind }
    }

    pub fn name(&self) -> String {
        format!("layers.{}.{}", self.layer, self.kind.name())
    }
}

impl std::fmt::Display for MatrixId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// One value per (layer, matrix-kind) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerMatrix<T> {
    layers: Vec<Vec<T>>,
}

impl<T> PerMatrix<T> {
    pub fn from_fn(n_layers: usize, mut f: impl FnMut(MatrixId) -> T) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                MatrixKind::ALL
                    .iter()
                    .map(|&k| f(MatrixId::new(l, k)))
                    .collect()
            })
            .collect();
        PerMatrix { layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn get(&self, id: MatrixId) -> &T {
        &self.layers[id.layer][id.kind.index()]
    }

    pub fn get_mut(&mut self, id: MatrixId) -> &mut T {
        &mut self.layers[id.layer][id.kind.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MatrixId, &T)> {
        self.layers.iter().enumerate().flat_map(|(l, row)| {
            MatrixKind::ALL
                .iter()
                .zip(row)
                .map(move |(&k, v)| (MatrixId::new(l, k), v))
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(MatrixId, &T) -> U) -> PerMatrix<U> {
        PerMatrix {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, row)| {
                    MatrixKind::ALL
                        .iter()
                        .zip(row)
                        .map(|(&k, v)| f(MatrixId::new(l, k), v))
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub rope: RopeConfig,
    pub tokenizer: TokenizerSpec,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        self.rope.validate()?;
        if self.rope.head_dim != self.head_dim() {
            return Err(Error::Config(format!(
                "rope.head_dim {} != d_model/n_heads {}",
                self.rope.head_dim,
                self.head_dim()
            )));
        }
        self.tokenizer.validate()?;
        if self.tokenizer.vocab_size() != self.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size {} != tokenizer vocab size {}",
                self.vocab_size,
                self.tokenizer.vocab_size()
            )));
        }
        Ok(())
    }

    /// Shape of one named matrix as (out_features, in_features).
    pub fn matrix_shape(&self, kind: MatrixKind) -> (usize, usize) {
        match kind {
            MatrixKind::Q | MatrixKind::K | MatrixKind::V | MatrixKind::O => {
                (self.d_model, self.d_model)
            }
            MatrixKind::Gate | MatrixKind::Up => (self.d_ff, self.d_model),
            MatrixKind::Down => (self.d_model, self.d_ff),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S> {
    pub attn_norm: Vec<S>,
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub w_o: Tensor<S>,
    pub mlp_norm: Vec<S>,
    pub w_gate: Tensor<S>,
    pub w_up: Tensor<S>,
    pub w_down: Tensor<S>,
}

impl<S: Scalar> LayerWeights<S> {
    pub fn matrix(&self, kind: MatrixKind) -> &Tensor<S> {
        match kind {
            MatrixKind::Q => &self.w_q,
            MatrixKind::K => &self.w_k,
            MatrixKind::V => &self.w_v,
            MatrixKind::O => &self.w_o,
            MatrixKind::Gate => &self.w_gate,
            MatrixKind::Up => &self.w_up,
            MatrixKind::Down => &self.w_down,
        }
    }

    pub fn matrix_mut(&mut self, kind: MatrixKind) -> &mut Tensor<S> {
        match kind {
            MatrixKind::Q => &mut self.w_q,
            MatrixKind::K => &mut self.w_k,
            MatrixKind::V => &mut self.w_v,
            MatrixKind::O => &mut self.w_o,
            MatrixKind::Gate => &mut self.w_gate,
            MatrixKind::Up => &mut self.w_up,
            MatrixKind::Down => &mut self.w_down,
        }
    }
}

/// Training metadata carried in the checkpoint manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint<S> {
    pub config: ModelConfig,
    pub embed: Tensor<S>,
    pub layers: Vec<LayerWeights<S>>,
    pub final_norm: Vec<S>,
    pub head: Tensor<S>,
    pub meta: CheckpointMeta,
}

impl<S: Scalar> ModelCheckpoint<S> {
    /// Seeded Gaussian initialization (Box–Muller over ChaCha draws).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let gauss = |std: f64, rng: &mut ChaCha8Rng| -> f64 {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let tensor = |rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng| {
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols)
                    .map(|_| S::of_f64(gauss(std, rng)))
                    .collect(),
            )
            .unwrap()
        };
        const INIT_STD: f64 = 0.05;
        let embed = tensor(config.vocab_size, config.d_model, INIT_STD, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![S::one(); config.d_model],
                w_q: tensor(config.d_model, config.d_model, INIT_STD, &mut rng),
                w_k: tensor(config.d_model, config.d_model, INIT_STD, &mut rng),
                w_v: tensor(config.d_model, config.d_model, INIT_STD, &mut rng),
                w_o: tensor(config.d_model, config.d_model, INIT_STD, &mut rng),
                mlp_norm: vec![S::one(); config.d_model],
                w_gate: tensor(config.d_ff, config.d_model, INIT_STD, &mut rng),
                w_up: tensor(config.d_ff, config.d_model, INIT_STD, &mut rng),
                w_down: tensor(config.d_model, config.d_ff, INIT_STD, &mut rng),
            })
            .collect();
        let final_norm = vec![S::one(); config.d_model];
        let head = tensor(config.vocab_size, config.d_model, INIT_STD, &mut rng);
        Ok(ModelCheckpoint {
            config: config.clone(),
            embed,
            layers,
            final_norm,
            head,
            meta: CheckpointMeta {
                seed,
                steps: 0,
                final_loss: None,
            },
        })
    }

    pub fn matrix(&self, id: MatrixId) -> &Tensor<S> {
        self.layers[id.layer].matrix(id.kind)
    }

    pub fn matrix_mut(&mut self, id: MatrixId) -> &mut Tensor<S> {
        self.layers[id.layer].matrix_mut(id.kind)
    }

    pub fn matrix_ids(&self) -> Vec<MatrixId> {
        let mut out = Vec::new();
        for l in 0..self.layers.len() {
            for k in MatrixKind::ALL {
                out.push(MatrixId::new(l, k));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::Config(format!(
                "checkpoint has {} layers, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        if self.embed.shape() != [self.config.vocab_size, self.config.d_model] {
            return Err(Error::Config("embedding shape mismatch".into()));
        }
        if self.head.shape() != [self.config.vocab_size, self.config.d_model] {
            return Err(Error::Config("head shape mismatch".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for k in MatrixKind::ALL {
                let (rows, cols) = self.config.matrix_shape(k);
                let m = layer.matrix(k);
                if m.shape() != [rows, cols] {
                    return Err(Error::Config(format!(
                        "layers.{l}.{} has shape {:?}, expected [{rows}, {cols}]",
                        k.name(),
                        m.shape()
                    )));
                }
                m.validate_finite(&MatrixId::new(l, k).name())?;
            }
        }
        self.embed.validate_finite("embed")?;
        self.head.validate_finite("head")?;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ModelCheckpoint<T> {
        let cast_vec = |v: &Vec<S>| v.iter().map(|&x| T::of_f64(x.as_f64())).collect();
        ModelCheckpoint {
            config: self.config.clone(),
            embed: self.embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: cast_vec(&l.attn_norm),
                    w_q: l.w_q.cast(),
                    w_k: l.w_k.cast(),
                    w_v: l.w_v.cast(),
                    w_o: l.w_o.cast(),
                    mlp_norm: cast_vec(&l.mlp_norm),
                    w_gate: l.w_gate.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                })
                .collect(),
            final_norm: cast_vec(&self.final_norm),
            head: self.head.cast(),
            meta: self.meta.clone(),
        }
    }

    /// SHA-256 over the config JSON and every parameter's bit pattern, in a
    /// fixed traversal order. Bit-exact in-memory identity check.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        let mut eat = |slice: &[S]| {
            for v in slice {
                h.update(v.le_bits());
            }
        };
        eat(self.embed.data());
        for layer in &self.layers {
            eat(&layer.attn_norm);
            for k in MatrixKind::ALL {
                eat(layer.matrix(k).data());
            }
            eat(&layer.mlp_norm);
        }
        eat(&self.final_norm);
        eat(self.head.data());
        crate::util::hex(&h.finalize())
    }
}

#[cfg(test)]
pub(crate) fn tiny_test_config() -> ModelConfig {
    use crate::rope::RopeLayout;
    ModelConfig {
        vocab_size: 32,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 64,
        rope: RopeConfig {
            head_dim: 8,
            base: 50_000.0,
            layout: RopeLayout::HalfSplit,
            enabled: true,
        },
        tokenizer: TokenizerSpec::Word {
            vocab: std::iter::once(crate::data::BOS_WORD.to_string())
                .chain((0..31).map(|i| format!("w{i}")))
                .collect(),
        },
    }
}
