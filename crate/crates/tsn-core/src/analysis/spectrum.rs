//! Activation frequency spectra and the mask-frequency histogram.
//!
//! A head's spectrum is the mean (over token positions) 2-norm of each rotary
//! feature pair; the dominant frequency is the argmax. Masked entries of
//! `W_Q`/`W_K` are attributed to frequencies through their out-feature (row)
//! index, which is what the rotation acts on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::SparsityMask;
use crate::model::{Captured, MatrixKind, ModelConfig};
use crate::rope::feature_to_frequency;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSpectrum {
    pub layer: usize,
    pub head: usize,
    /// Mean pair norm per frequency index, length `head_dim/2`.
    pub norms: Vec<f64>,
    /// Argmax frequency; ties break toward lower m. None when every norm is
    /// exactly zero.
    pub dominant: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub which: MatrixKind,
    pub post_rotation: bool,
    pub heads: Vec<HeadSpectrum>,
}

fn dominant_of(norms: &[f64]) -> Option<usize> {
    if norms.iter().all(|&n| n == 0.0) {
        return None;
    }
    let mut best = 0;
    for (m, &n) in norms.iter().enumerate().skip(1) {
        if n > norms[best] {
            best = m;
        }
    }
    Some(best)
}

fn head_norms<S: Scalar>(acts: &Tensor<S>, cfg: &ModelConfig) -> Vec<f64> {
    let n_freq = cfg.rope.n_frequencies();
    let positions = acts.rows() as f64;
    let mut norms = vec![0.0f64; n_freq];
    for t in 0..acts.rows() {
        let row = acts.row(t);
        for (m, norm) in norms.iter_mut().enumerate() {
            let (a, b) = cfg.rope.pair_indices(m);
            let (x, y) = (row[a].as_f64(), row[b].as_f64());
            *norm += (x * x + y * y).sqrt();
        }
    }
    for n in &mut norms {
        *n /= positions;
    }
    norms
}

/// Per-head norm-per-frequency table from a captured trace. Pre-rotation
/// activations by default (rotation preserves pair norms exactly, so the
/// post-rotation flag exists for exploratory use).
pub fn activation_spectrum<S: Scalar>(
    captured: &Captured<S>,
    which: MatrixKind,
    cfg: &ModelConfig,
    post_rotation: bool,
) -> Result<SpectrumTable> {
    if which != MatrixKind::Q && which != MatrixKind::K {
        return Err(Error::Config(format!(
            "activation spectrum is defined for w_q/w_k, not {which}"
        )));
    }
    let mut heads = Vec::new();
    for (layer, cap) in captured.layers.iter().enumerate() {
        let per_head = match (which, post_rotation) {
            (MatrixKind::Q, false) => &cap.q_pre,
            (MatrixKind::Q, true) => &cap.q_rot,
            (MatrixKind::K, false) => &cap.k_pre,
            (MatrixKind::K, true) => &cap.k_rot,
            _ => unreachable!(),
        };
        for (head, acts) in per_head.iter().enumerate() {
            let norms = head_norms(acts, cfg);
            let dominant = dominant_of(&norms);
            heads.push(HeadSpectrum {
                layer,
                head,
                norms,
                dominant,
            });
        }
    }
    Ok(SpectrumTable {
        which,
        post_rotation,
        heads,
    })
}

/// Masked-entry counts per (layer, head, matrix, frequency) for W_Q and W_K.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreqHistogram {
    /// `counts[layer][head]` maps each of Q (index 0) and K (index 1) to a
    /// per-frequency count vector.
    pub counts: Vec<Vec<[Vec<usize>; 2]>>,
}

impl FreqHistogram {
    pub fn counts_for(&self, layer: usize, head: usize, which: MatrixKind) -> &[usize] {
        let slot = match which {
            MatrixKind::Q => 0,
            MatrixKind::K => 1,
            _ => panic!("histogram only covers w_q/w_k"),
        };
        &self.counts[layer][head][slot]
    }

    pub fn total(&self) -> usize {
        self.counts
            .iter()
            .flatten()
            .flat_map(|pair| pair.iter())
            .flatten()
            .sum()
    }
}

/// Attribute every masked W_Q/W_K entry to its head and frequency.
pub fn mask_frequency_histogram(mask: &SparsityMask, cfg: &ModelConfig) -> Result<FreqHistogram> {
    let n_freq = cfg.rope.n_frequencies();
    let mut counts =
        vec![vec![[vec![0usize; n_freq], vec![0usize; n_freq]]; cfg.n_heads]; mask.matrices.n_layers()];
    for (id, m) in mask.matrices.iter() {
        let slot = match id.kind {
            MatrixKind::Q => 0,
            MatrixKind::K => 1,
            _ => continue,
        };
        for &flat in &m.indices {
            let row = flat as usize / m.cols;
            let (head, freq) = feature_to_frequency(row, &cfg.rope, cfg.n_heads)?;
            counts[id.layer][head][slot][freq] += 1;
        }
    }
    Ok(FreqHistogram { counts })
}

/// Spectrum alignment entry per (layer, head, matrix): activation spectrum,
/// perturbed-frequency histogram, and their alignment distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub layer: usize,
    pub head: usize,
    pub matrix: MatrixKind,
    pub norms: Vec<f64>,
    pub dominant: Option<usize>,
    pub masked_per_freq: Vec<usize>,
    /// Up to three most frequently perturbed frequencies, count-descending,
    /// ties toward lower m; only frequencies with nonzero counts.
    pub top3: Vec<usize>,
    /// `min over top3 of |freq − dominant|`.
    pub alignment_distance: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub post_rotation: bool,
    pub entries: Vec<SpectrumEntry>,
}

pub fn top3_frequencies(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).filter(|&m| counts[m] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(3);
    order
}

/// Full alignment report over both W_Q and W_K.
pub fn spectrum_report<S: Scalar>(
    captured: &Captured<S>,
    mask: &SparsityMask,
    cfg: &ModelConfig,
    post_rotation: bool,
) -> Result<SpectrumReport> {
    let hist = mask_frequency_histogram(mask, cfg)?;
    let mut entries = Vec::new();
    for which in [MatrixKind::Q, MatrixKind::K] {
        let table = activation_spectrum(captured, which, cfg, post_rotation)?;
        for hs in table.heads {
            let masked = hist.counts_for(hs.layer, hs.head, which).to_vec();
            let top3 = top3_frequencies(&masked);
            let alignment_distance = match (hs.dominant, top3.is_empty()) {
                (Some(dom), false) => top3.iter().map(|&f| f.abs_diff(dom)).min(),
                _ => None,
            };
            entries.push(SpectrumEntry {
                layer: hs.layer,
                head: hs.head,
                matrix: which,
                norms: hs.norms,
                dominant: hs.dominant,
                masked_per_freq: masked,
                top3,
                alignment_distance,
            });
        }
    }
    Ok(SpectrumReport {
        post_rotation,
        entries,
    })
}
