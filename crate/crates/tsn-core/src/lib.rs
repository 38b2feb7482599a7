//! tsn-core: task-sensitivity analysis for a toy RoPE decoder.
//!
//! The crate trains a small decoder-only transformer, estimates per-parameter
//! sensitivity from empirical Fisher diagonals, builds extremely sparse
//! top-κ masks, applies reversible mean-value perturbations, and analyzes the
//! mechanistic consequences: positional-encoding frequency spectra, attention
//! sinks, and query–key geometry.
//!
//! Core math is generic over the storage scalar (`f32` for checkpoint
//! fidelity, `f64` for gradient-check runs); see the type aliases below.

pub mod analysis;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod mask;
pub mod model;
pub mod perturb;
pub mod report;
pub mod rope;
pub mod runconfig;
pub mod scalar;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
pub use model::{
    forward, greedy_continue, loss, per_sample_grad, train_toy, Captured, CheckpointMeta,
    ForwardTrace, LayerCapture, LayerWeights, LossMode, MatrixId, MatrixKind, ModelCheckpoint,
    ModelConfig, PerMatrix, PerSampleGradient, Sample, SampleTarget, Targets, TrainConfig,
};
pub use rope::{RopeConfig, RopeLayout};
pub use runconfig::RunConfig;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Storage-precision tensor (checkpoints, traces).
pub type Tensor32 = Tensor<f32>;
/// Extended-precision tensor (gradient checks, analysis intermediates).
pub type Tensor64 = Tensor<f64>;
/// Storage-precision checkpoint.
pub type Checkpoint32 = ModelCheckpoint<f32>;
/// Extended-precision checkpoint for 64-bit verification runs.
pub type Checkpoint64 = ModelCheckpoint<f64>;
