//! Mean-value perturbation: set every masked entry of a matrix to the
//! arithmetic mean of its unmasked entries, producing a new checkpoint plus
//! an auditable record that reverts bit-exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::SensitivityMap;
use crate::mask::{MaskProvenance, SparsityMask};
use crate::model::{ModelCheckpoint, PerMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    Mean,
    RandomMaskMean,
}

/// Old values of the entries one matrix lost, plus the replacement written.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPerturbation<S> {
    pub indices: Vec<u32>,
    pub old_values: Vec<S>,
    pub replacement: S,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRecord<S> {
    pub per_matrix: PerMatrix<MatrixPerturbation<S>>,
    pub mask_fingerprint: String,
    pub mode: PerturbMode,
    pub original_fingerprint: String,
    pub perturbed_fingerprint: String,
}

/// Mean of the entries NOT in `indices` (sorted), accumulated in f64 and
/// rounded to storage precision once.
fn unmasked_mean<S: Scalar>(data: &[S], indices: &[u32]) -> Option<S> {
    let masked = indices.len();
    if masked >= data.len() {
        return None;
    }
    let mut acc = 0.0f64;
    let mut next = 0usize;
    for (i, v) in data.iter().enumerate() {
        if next < indices.len() && indices[next] as usize == i {
            next += 1;
            continue;
        }
        acc += v.as_f64();
    }
    Some(S::of_f64(acc / (data.len() - masked) as f64))
}

/// Apply the mean-value perturbation under a mask. The input checkpoint is
/// untouched; a perturbed copy and the revert record are returned.
pub fn apply_mean_perturbation<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    mask: &SparsityMask,
) -> Result<(ModelCheckpoint<S>, PerturbationRecord<S>)> {
    if mask.matrices.n_layers() != ckpt.config.n_layers {
        return Err(Error::DimensionMismatch {
            op: "apply_mean_perturbation",
            left: vec![mask.matrices.n_layers()],
            right: vec![ckpt.config.n_layers],
        });
    }
    let original_fingerprint = ckpt.fingerprint();
    let mut perturbed = ckpt.clone();
    let mut records: Vec<MatrixPerturbation<S>> = Vec::new();

    for (id, m) in mask.matrices.iter() {
        let target = perturbed.matrix_mut(id);
        if m.rows != target.rows() || m.cols != target.cols() {
            return Err(Error::DimensionMismatch {
                op: "apply_mean_perturbation",
                left: vec![m.rows, m.cols],
                right: target.shape().to_vec(),
            });
        }
        let data = target.data_mut();
        let Some(replacement) = unmasked_mean(data, &m.indices) else {
            return Err(Error::DegenerateMask {
                matrix: id.to_string(),
            });
        };
        let mut old_values = Vec::with_capacity(m.indices.len());
        for &flat in &m.indices {
            old_values.push(data[flat as usize]);
            data[flat as usize] = replacement;
        }
        records.push(MatrixPerturbation {
            indices: m.indices.clone(),
            old_values,
            replacement,
            count: m.indices.len(),
        });
    }

    let mut it = records.into_iter();
    let per_matrix = PerMatrix::from_fn(ckpt.config.n_layers, |_| it.next().unwrap());
    let record = PerturbationRecord {
        per_matrix,
        mask_fingerprint: mask.fingerprint(),
        mode: if mask.provenance == MaskProvenance::Random {
            PerturbMode::RandomMaskMean
        } else {
            PerturbMode::Mean
        },
        original_fingerprint,
        perturbed_fingerprint: perturbed.fingerprint(),
    };
    Ok((perturbed, record))
}

/// Restore the original checkpoint from a perturbed one and its record.
/// Fails without touching anything if the record does not match the input's
/// lineage, and verifies the restored fingerprint.
pub fn revert<S: Scalar>(
    perturbed: &ModelCheckpoint<S>,
    record: &PerturbationRecord<S>,
) -> Result<ModelCheckpoint<S>> {
    let got = perturbed.fingerprint();
    if got != record.perturbed_fingerprint {
        return Err(Error::FingerprintMismatch {
            what: "revert input checkpoint",
            expected: record.perturbed_fingerprint.clone(),
            got,
        });
    }
    let mut restored = perturbed.clone();
    for (id, p) in record.per_matrix.iter() {
        let data = restored.matrix_mut(id).data_mut();
        for (&flat, &old) in p.indices.iter().zip(&p.old_values) {
            data[flat as usize] = old;
        }
    }
    let got = restored.fingerprint();
    if got != record.original_fingerprint {
        return Err(Error::FingerprintMismatch {
            what: "reverted checkpoint",
            expected: record.original_fingerprint.clone(),
            got,
        });
    }
    Ok(restored)
}

/// Quadratic surrogate `½ Σ_{j∈mask} H_jj δ²` with one δ for every entry.
pub fn predicted_delta_loss_uniform(
    sens: &SensitivityMap,
    mask: &SparsityMask,
    delta: f64,
) -> f64 {
    let mut acc = 0.0;
    for (id, m) in mask.matrices.iter() {
        let h = sens.matrices.get(id).data();
        for &flat in &m.indices {
            acc += h[flat as usize];
        }
    }
    0.5 * acc * delta * delta
}

/// Quadratic surrogate with the actual per-entry deltas of a record.
pub fn predicted_delta_loss<S: Scalar>(
    sens: &SensitivityMap,
    record: &PerturbationRecord<S>,
) -> f64 {
    let mut acc = 0.0;
    for (id, p) in record.per_matrix.iter() {
        let h = sens.matrices.get(id).data();
        for (&flat, &old) in p.indices.iter().zip(&p.old_values) {
            let delta = p.replacement.as_f64() - old.as_f64();
            acc += h[flat as usize] * delta * delta;
        }
    }
    0.5 * acc
}
