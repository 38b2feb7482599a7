//! Empirical Fisher diagonal estimation and the sampled-block
//! diagonal-dominance check.
//!
//! The diagonal estimate for parameter j is `(1/n) Σ_i g_{i,j}²` over
//! per-sample gradients, accumulated in f64. Sampled dense blocks
//! `(1/n) Σ_i g_i[coords] g_i[coords]ᵀ` support the dominance report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{per_sample_grad, LossMode, MatrixId, ModelCheckpoint, PerMatrix, Sample};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::fingerprint_token_sets;

/// Per-matrix nonnegative sensitivity estimates, shape-aligned with the
/// checkpoint weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub matrices: PerMatrix<Tensor<f64>>,
    pub n_samples: usize,
    pub loss_mode: LossMode,
    pub dataset_fingerprint: String,
}

impl SensitivityMap {
    pub fn entry(&self, id: MatrixId, flat: usize) -> f64 {
        self.matrices.get(id).data()[flat]
    }

    pub fn validate_nonnegative(&self) -> Result<()> {
        for (id, v) in self.matrices.iter() {
            if v.data().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("sensitivity map entry in {id}"),
                });
            }
        }
        Ok(())
    }
}

/// Content hash of a sample set: token ids plus the target encoding.
pub fn dataset_fingerprint(samples: &[Sample]) -> String {
    let sets: Vec<Vec<u32>> = samples
        .iter()
        .map(|s| {
            let mut v = s.tokens.clone();
            match s.target {
                crate::model::SampleTarget::Next => v.push(u32::MAX),
                crate::model::SampleTarget::Final(t) => {
                    v.push(u32::MAX - 1);
                    v.push(t);
                }
            }
            v
        })
        .collect();
    fingerprint_token_sets(sets.iter().map(Vec::as_slice))
}

fn check_dataset(samples: &[Sample], loss_mode: LossMode, op: &'static str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset { op });
    }
    for (i, s) in samples.iter().enumerate() {
        if s.loss_mode() != loss_mode {
            return Err(Error::LossModeMismatch {
                context: format!(
                    "sample {i} carries {} targets but the estimate runs {loss_mode}",
                    s.loss_mode()
                ),
            });
        }
    }
    Ok(())
}

fn wrap_sample_err(index: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::SampleTokenization { .. } => e,
        other => Error::SampleTokenization {
            index,
            reason: other.to_string(),
        },
    }
}

/// Accumulate squared gradients into per-matrix f64 buffers.
fn accumulate_squares<S: Scalar>(
    acc: &mut PerMatrix<Tensor<f64>>,
    grad: &PerMatrix<Tensor<S>>,
) {
    for l in 0..acc.n_layers() {
        for kind in crate::model::MatrixKind::ALL {
            let id = MatrixId::new(l, kind);
            let dst = acc.get_mut(id).data_mut();
            for (d, g) in dst.iter_mut().zip(grad.get(id).data()) {
                let g = g.as_f64();
                *d += g * g;
            }
        }
    }
}

fn zero_map<S: Scalar>(ckpt: &ModelCheckpoint<S>) -> PerMatrix<Tensor<f64>> {
    PerMatrix::from_fn(ckpt.config.n_layers, |id| {
        let (r, c) = ckpt.config.matrix_shape(id.kind);
        Tensor::zeros(vec![r, c])
    })
}

/// Estimate the Fisher diagonal over a dataset, sequentially in sample order.
pub fn estimate_fisher_diag<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    samples: &[Sample],
    loss_mode: LossMode,
) -> Result<SensitivityMap> {
    estimate_fisher_diag_threaded(ckpt, samples, loss_mode, 1)
}

/// Threaded variant: samples are split into `threads` contiguous chunks whose
/// partial sums are reduced in chunk order. With one thread the reduction
/// order is exactly sample order (the deterministic default).
pub fn estimate_fisher_diag_threaded<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    samples: &[Sample],
    loss_mode: LossMode,
    threads: usize,
) -> Result<SensitivityMap> {
    check_dataset(samples, loss_mode, "estimate_fisher_diag")?;
    let threads = threads.max(1).min(samples.len());
    let chunk_size = samples.len().div_ceil(threads);

    let partials: Vec<Result<PerMatrix<Tensor<f64>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk_size)
            .enumerate()
            .map(|(chunk_idx, chunk)| {
                scope.spawn(move || {
                    let mut acc = zero_map(ckpt);
                    for (off, sample) in chunk.iter().enumerate() {
                        let g = per_sample_grad(ckpt, sample)
                            .map_err(wrap_sample_err(chunk_idx * chunk_size + off))?;
                        accumulate_squares(&mut acc, &g.matrices);
                    }
                    Ok(acc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fisher worker panicked"))
            .collect()
    });

    let mut total = zero_map(ckpt);
    for partial in partials {
        let partial = partial?;
        for l in 0..total.n_layers() {
            for kind in crate::model::MatrixKind::ALL {
                let id = MatrixId::new(l, kind);
                let dst = total.get_mut(id).data_mut();
                for (d, p) in dst.iter_mut().zip(partial.get(id).data()) {
                    *d += p;
                }
            }
        }
    }

    let n = samples.len() as f64;
    let matrices = total.map(|_, v| {
        Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|x| x / n).collect(),
        )
        .expect("shape preserved")
    });
    Ok(SensitivityMap {
        matrices,
        n_samples: samples.len(),
        loss_mode,
        dataset_fingerprint: dataset_fingerprint(samples),
    })
}

/// Uniformly sample `points` distinct coordinates per (layer, matrix),
/// reproducibly from the seed.
pub fn sample_block_coords(
    config: &crate::model::ModelConfig,
    points: usize,
    seed: u64,
) -> Vec<(MatrixId, Vec<usize>)> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for layer in 0..config.n_layers {
        for kind in crate::model::MatrixKind::ALL {
            let (r, c) = config.matrix_shape(kind);
            let mut set = std::collections::BTreeSet::new();
            while set.len() < points.min(r * c) {
                set.insert(rng.random_range(0..r * c));
            }
            coords.push((MatrixId::new(layer, kind), set.into_iter().collect()));
        }
    }
    coords
}

/// A dense block of the empirical Fisher restricted to sampled coordinates
/// of one matrix.
#[derive(Debug, Clone)]
pub struct FisherBlockSample {
    pub matrix: MatrixId,
    pub coords: Vec<usize>,
    /// c × c, symmetric, f64.
    pub block: Tensor<f64>,
    pub n_samples: usize,
}

/// Build one dense Fisher block per requested matrix.
pub fn sample_fisher_block<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    samples: &[Sample],
    coords: &[(MatrixId, Vec<usize>)],
    loss_mode: LossMode,
) -> Result<Vec<FisherBlockSample>> {
    check_dataset(samples, loss_mode, "sample_fisher_block")?;
    for (id, list) in coords {
        if list.len() > 100 {
            return Err(Error::Config(format!(
                "fisher block of {id} samples {} coordinates; the cap is 100 per matrix",
                list.len()
            )));
        }
        let (r, c) = ckpt.config.matrix_shape(id.kind);
        if id.layer >= ckpt.config.n_layers {
            return Err(Error::IndexOutOfRange {
                what: "fisher block layer",
                index: id.layer,
                limit: ckpt.config.n_layers,
            });
        }
        for &flat in list {
            if flat >= r * c {
                return Err(Error::IndexOutOfRange {
                    what: "fisher block coordinate",
                    index: flat,
                    limit: r * c,
                });
            }
        }
    }

    let mut blocks: Vec<(MatrixId, Vec<usize>, Vec<f64>)> = coords
        .iter()
        .map(|(id, list)| (*id, list.clone(), vec![0.0; list.len() * list.len()]))
        .collect();

    for (i, sample) in samples.iter().enumerate() {
        let g = per_sample_grad(ckpt, sample).map_err(wrap_sample_err(i))?;
        for (id, list, acc) in &mut blocks {
            let grad = g.matrices.get(*id).data();
            let c = list.len();
            let picked: Vec<f64> = list.iter().map(|&f| grad[f].as_f64()).collect();
            for a in 0..c {
                for b in 0..c {
                    acc[a * c + b] += picked[a] * picked[b];
                }
            }
        }
    }

    let n = samples.len() as f64;
    blocks
        .into_iter()
        .map(|(matrix, coords, acc)| {
            let c = coords.len();
            let block = Tensor::new(vec![c, c], acc.into_iter().map(|x| x / n).collect())?;
            Ok(FisherBlockSample {
                matrix,
                coords,
                block,
                n_samples: samples.len(),
            })
        })
        .collect()
}

/// Mean absolute diagonal vs off-diagonal magnitudes of one sampled block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagDominanceReport {
    pub matrix: MatrixId,
    pub n_coords: usize,
    pub mean_abs_diag: f64,
    pub mean_abs_offdiag: f64,
    /// `mean_abs_diag / mean_abs_offdiag`; +∞ when the off-diagonal mean is
    /// exactly zero (serialized as the string "inf").
    #[serde(with = "crate::util::json_f64")]
    pub ratio: f64,
}

pub fn diag_dominance_report(block: &FisherBlockSample) -> Result<DiagDominanceReport> {
    let c = block.coords.len();
    if c < 2 {
        return Err(Error::Config(
            "diagonal-dominance report needs a block of at least 2 coordinates".into(),
        ));
    }
    let mut diag = 0.0;
    let mut off = 0.0;
    for a in 0..c {
        for b in 0..c {
            let v = block.block.at(a, b).abs();
            if a == b {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    let mean_abs_diag = diag / c as f64;
    let mean_abs_offdiag = off / (c * c - c) as f64;
    let ratio = if mean_abs_offdiag == 0.0 {
        f64::INFINITY
    } else {
        mean_abs_diag / mean_abs_offdiag
    };
    Ok(DiagDominanceReport {
        matrix: block.matrix,
        n_coords: c,
        mean_abs_diag,
        mean_abs_offdiag,
        ratio,
    })
}
