//! Top-κ sensitivity masks, the task-minus-general combination, the seeded
//! random baseline, and exact 0/1 rank statistics.
//!
//! Budgets are `floor(κ·d)` per matrix (κ·d is rarely integral; floor never
//! exceeds the stated proportion) and ties in the sensitivity order break
//! toward the smaller flat index, so top-k selections at growing κ are
//! nested and runs are reproducible across platforms.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fisher::SensitivityMap;
use crate::model::{LossMode, MatrixId, ModelCheckpoint, ModelConfig, PerMatrix};
use crate::scalar::Scalar;
use crate::util::hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskProvenance {
    Task,
    General,
    Combined,
    Random,
}

impl std::fmt::Display for MaskProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MaskProvenance::Task => "task",
            MaskProvenance::General => "general",
            MaskProvenance::Combined => "combined",
            MaskProvenance::Random => "random",
        };
        f.write_str(s)
    }
}

/// Binary mask over one matrix, stored as sorted flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Budget `floor(κ·d)` this mask was built with (popcount for
    /// task/general/random; an upper bound for combined).
    pub budget: usize,
    /// Sorted, deduplicated flat indices of selected entries.
    pub indices: Vec<u32>,
}

impl MaskMatrix {
    pub fn popcount(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, flat: u32) -> bool {
        self.indices.binary_search(&flat).is_ok()
    }
}

/// Provenance bookkeeping: which artifacts produced a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MaskSource {
    pub sensitivity_fingerprint: Option<String>,
    pub dataset_fingerprint: Option<String>,
    pub loss_mode: Option<LossMode>,
    pub seed: Option<u64>,
    pub task_kappa: Option<f64>,
    pub general_kappa: Option<f64>,
    pub task_fingerprint: Option<String>,
    pub general_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityMask {
    pub matrices: PerMatrix<MaskMatrix>,
    pub kappa: f64,
    pub provenance: MaskProvenance,
    pub source: MaskSource,
}

impl SparsityMask {
    pub fn popcount(&self) -> usize {
        self.matrices.iter().map(|(_, m)| m.popcount()).sum()
    }

    /// SHA-256 over provenance, κ, and every index list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.provenance.to_string().as_bytes());
        h.update(self.kappa.to_le_bytes());
        for (id, m) in self.matrices.iter() {
            h.update(id.name().as_bytes());
            h.update((m.indices.len() as u64).to_le_bytes());
            for i in &m.indices {
                h.update(i.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    fn shapes_match(&self, other: &SparsityMask) -> bool {
        if self.matrices.n_layers() != other.matrices.n_layers() {
            return false;
        }
        self.matrices.iter().zip(other.matrices.iter()).all(
            |((ida, a), (idb, b))| ida == idb && a.rows == b.rows && a.cols == b.cols,
        )
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) || !kappa.is_finite() {
        return Err(Error::KappaOutOfRange { kappa });
    }
    Ok(())
}

pub fn budget_for(kappa: f64, d: usize) -> usize {
    (kappa * d as f64).floor() as usize
}

/// Select the `floor(κ·d)` most sensitive entries of every matrix; ties break
/// to the smaller flat index. Task masks must come from final-token maps and
/// general masks from all-token maps unless `force` is set.
pub fn build_topk_mask(
    sens: &SensitivityMap,
    kappa: f64,
    provenance: MaskProvenance,
    force: bool,
) -> Result<SparsityMask> {
    check_kappa(kappa)?;
    let expected_mode = match provenance {
        MaskProvenance::Task => LossMode::FinalToken,
        MaskProvenance::General => LossMode::AllTokens,
        other => {
            return Err(Error::ProvenanceMismatch {
                expected: "task or general",
                got: other.to_string(),
            })
        }
    };
    if sens.loss_mode != expected_mode && !force {
        return Err(Error::LossModeMismatch {
            context: format!(
                "{provenance} mask from a {} sensitivity map",
                sens.loss_mode
            ),
        });
    }
    sens.validate_nonnegative()?;

    let matrices = sens.matrices.map(|_, tensor| {
        let values = tensor.data();
        let d = values.len();
        let k = budget_for(kappa, d);
        let mut order: Vec<u32> = (0..d as u32).collect();
        order.sort_by(|&a, &b| {
            values[b as usize]
                .partial_cmp(&values[a as usize])
                .expect("sensitivities are finite")
                .then(a.cmp(&b))
        });
        let mut indices: Vec<u32> = order.into_iter().take(k).collect();
        indices.sort_unstable();
        MaskMatrix {
            rows: tensor.rows(),
            cols: tensor.cols(),
            budget: k,
            indices,
        }
    });

    Ok(SparsityMask {
        matrices,
        kappa,
        provenance,
        source: MaskSource {
            sensitivity_fingerprint: Some(sens.dataset_fingerprint.clone()),
            dataset_fingerprint: Some(sens.dataset_fingerprint.clone()),
            loss_mode: Some(sens.loss_mode),
            ..MaskSource::default()
        },
    })
}

/// Entrywise `task AND NOT general`; provenance becomes `combined`.
pub fn combine_masks(task: &SparsityMask, general: &SparsityMask) -> Result<SparsityMask> {
    if task.provenance != MaskProvenance::Task {
        return Err(Error::ProvenanceMismatch {
            expected: "task",
            got: task.provenance.to_string(),
        });
    }
    if general.provenance != MaskProvenance::General {
        return Err(Error::ProvenanceMismatch {
            expected: "general",
            got: general.provenance.to_string(),
        });
    }
    if !task.shapes_match(general) {
        return Err(Error::DimensionMismatch {
            op: "combine_masks",
            left: vec![task.matrices.n_layers()],
            right: vec![general.matrices.n_layers()],
        });
    }
    let matrices = task.matrices.map(|id, t| {
        let g = general.matrices.get(id);
        let indices: Vec<u32> = t
            .indices
            .iter()
            .copied()
            .filter(|&i| !g.contains(i))
            .collect();
        MaskMatrix {
            rows: t.rows,
            cols: t.cols,
            budget: t.budget,
            indices,
        }
    });
    Ok(SparsityMask {
        matrices,
        kappa: task.kappa,
        provenance: MaskProvenance::Combined,
        source: MaskSource {
            task_kappa: Some(task.kappa),
            general_kappa: Some(general.kappa),
            task_fingerprint: Some(task.fingerprint()),
            general_fingerprint: Some(general.fingerprint()),
            ..MaskSource::default()
        },
    })
}

/// Uniform random mask without replacement, budget `floor(κ·d)` per matrix,
/// reproducible from the seed.
pub fn build_random_mask(config: &ModelConfig, kappa: f64, seed: u64) -> Result<SparsityMask> {
    build_random_mask_excluding(config, kappa, seed, None)
}

/// Random baseline with an opt-in exclusion set (entries of `exclude` are
/// never selected).
pub fn build_random_mask_excluding(
    config: &ModelConfig,
    kappa: f64,
    seed: u64,
    exclude: Option<&SparsityMask>,
) -> Result<SparsityMask> {
    check_kappa(kappa)?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<MaskMatrix> = Vec::new();
    for layer in 0..config.n_layers {
        for kind in crate::model::MatrixKind::ALL {
            let id = MatrixId::new(layer, kind);
            let (rows, cols) = config.matrix_shape(kind);
            let d = rows * cols;
            let k = budget_for(kappa, d);
            let excluded = exclude.map(|m| m.matrices.get(id));
            let available = d - excluded.map_or(0, MaskMatrix::popcount);
            if k > available {
                return Err(Error::Config(format!(
                    "random mask budget {k} exceeds {available} unexcluded entries of {id}"
                )));
            }
            // Floyd's algorithm would also do; a retry set is simple and the
            // budgets here are far below d.
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < k {
                let cand = rng.random_range(0..d) as u32;
                if excluded.is_some_and(|m| m.contains(cand)) {
                    continue;
                }
                chosen.insert(cand);
            }
            out.push(MaskMatrix {
                rows,
                cols,
                budget: k,
                indices: chosen.into_iter().collect(),
            });
        }
    }
    let mut it = out.into_iter();
    let matrices = PerMatrix::from_fn(config.n_layers, |_| it.next().unwrap());
    Ok(SparsityMask {
        matrices,
        kappa,
        provenance: MaskProvenance::Random,
        source: MaskSource {
            seed: Some(seed),
            ..MaskSource::default()
        },
    })
}

// ── Rank statistics ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRankEntry {
    pub matrix: MatrixId,
    pub popcount: usize,
    /// Numerical rank of the weight matrix at the tolerance below.
    pub weight_rank: usize,
    pub weight_rank_tolerance: f64,
    /// Exact rank of the 0/1 mask matrix over the rationals.
    pub mask_rank: usize,
    pub nonzero_rows: usize,
    pub nonzero_cols: usize,
    /// mask_rank / min(nonzero rows, nonzero cols); None when the mask is
    /// empty. Row- and column-denominator variants are reported alongside.
    pub normalized_rank_min: Option<f64>,
    pub normalized_rank_rows: Option<f64>,
    pub normalized_rank_cols: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskRankReport {
    pub entries: Vec<MatrixRankEntry>,
}

/// Exact rank of a sparse 0/1 matrix via fraction-free Bareiss elimination
/// over arbitrary-precision integers, restricted to its nonzero rows and
/// columns.
pub fn mask_rank(mask: &MaskMatrix) -> usize {
    if mask.indices.is_empty() {
        return 0;
    }
    let (rows, cols) = (mask.rows, mask.cols);
    assert!(rows > 0 && cols > 0, "mask has no shape attached");
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &flat in &mask.indices {
        row_used[flat as usize / cols] = true;
        col_used[flat as usize % cols] = true;
    }
    let row_map: Vec<usize> = (0..rows).filter(|&r| row_used[r]).collect();
    let col_map: Vec<usize> = (0..cols).filter(|&c| col_used[c]).collect();
    let (nr, nc) = (row_map.len(), col_map.len());
    let col_pos: std::collections::HashMap<usize, usize> =
        col_map.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let row_pos: std::collections::HashMap<usize, usize> =
        row_map.iter().enumerate().map(|(i, &r)| (r, i)).collect();

    let mut a: Vec<Vec<BigInt>> = vec![vec![BigInt::zero(); nc]; nr];
    for &flat in &mask.indices {
        let r = row_pos[&(flat as usize / cols)];
        let c = col_pos[&(flat as usize % cols)];
        a[r][c] = BigInt::from(1);
    }

    bareiss_rank(&mut a)
}

fn bareiss_rank(a: &mut [Vec<BigInt>]) -> usize {
    let nr = a.len();
    if nr == 0 {
        return 0;
    }
    let nc = a[0].len();
    let mut rank = 0;
    let mut prev = BigInt::from(1);
    let mut pivot_row = 0;
    for col in 0..nc {
        if pivot_row >= nr {
            break;
        }
        let Some(found) = (pivot_row..nr).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(pivot_row, found);
        let pivot = a[pivot_row][col].clone();
        for r in pivot_row + 1..nr {
            for c in col + 1..nc {
                let num = &pivot * &a[r][c] - &a[r][col] * &a[pivot_row][c];
                a[r][c] = num / &prev;
            }
            a[r][col] = BigInt::zero();
        }
        prev = pivot;
        pivot_row += 1;
        rank += 1;
    }
    rank
}

/// Numerical rank of a real matrix via partial-pivot elimination, counting
/// pivots above `tol · max|entry|`.
pub fn numerical_rank<S: Scalar>(t: &crate::tensor::Tensor<S>, tol: f64) -> usize {
    let (rows, cols) = (t.rows(), t.cols());
    let mut a: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
    let max_abs = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return 0;
    }
    let threshold = tol * max_abs;
    let mut rank = 0;
    let mut pivot_row = 0;
    for col in 0..cols {
        if pivot_row >= rows {
            break;
        }
        let mut best = pivot_row;
        for r in pivot_row + 1..rows {
            if a[r * cols + col].abs() > a[best * cols + col].abs() {
                best = r;
            }
        }
        if a[best * cols + col].abs() <= threshold {
            continue;
        }
        if best != pivot_row {
            for c in 0..cols {
                a.swap(pivot_row * cols + c, best * cols + c);
            }
        }
        let pivot = a[pivot_row * cols + col];
        for r in pivot_row + 1..rows {
            let factor = a[r * cols + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..cols {
                a[r * cols + c] -= factor * a[pivot_row * cols + c];
            }
        }
        pivot_row += 1;
        rank += 1;
    }
    rank
}

pub const WEIGHT_RANK_TOL: f64 = 1e-6;

/// Rank statistics for every matrix of a mask against its checkpoint.
pub fn mask_rank_report<S: Scalar>(
    mask: &SparsityMask,
    ckpt: &ModelCheckpoint<S>,
) -> Result<MaskRankReport> {
    if mask.matrices.n_layers() != ckpt.config.n_layers {
        return Err(Error::DimensionMismatch {
            op: "mask_rank_report",
            left: vec![mask.matrices.n_layers()],
            right: vec![ckpt.config.n_layers],
        });
    }
    let mut entries = Vec::new();
    for (id, m) in mask.matrices.iter() {
        let weights = ckpt.matrix(id);
        let (rows, cols) = (weights.rows(), weights.cols());
        if m.rows != rows || m.cols != cols {
            return Err(Error::DimensionMismatch {
                op: "mask_rank_report",
                left: vec![m.rows, m.cols],
                right: vec![rows, cols],
            });
        }
        let rank = mask_rank(m);
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &flat in &m.indices {
            row_used[flat as usize / cols] = true;
            col_used[flat as usize % cols] = true;
        }
        let nzr = row_used.iter().filter(|&&b| b).count();
        let nzc = col_used.iter().filter(|&&b| b).count();
        let norm = |den: usize| (den > 0).then(|| rank as f64 / den as f64);
        entries.push(MatrixRankEntry {
            matrix: id,
            popcount: m.popcount(),
            weight_rank: numerical_rank(weights, WEIGHT_RANK_TOL),
            weight_rank_tolerance: WEIGHT_RANK_TOL,
            mask_rank: rank,
            nonzero_rows: nzr,
            nonzero_cols: nzc,
            normalized_rank_min: norm(nzr.min(nzc)),
            normalized_rank_rows: norm(nzr),
            normalized_rank_cols: norm(nzc),
        });
    }
    Ok(MaskRankReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MatrixKind;

    fn map_from(values: Vec<Vec<f64>>, loss_mode: LossMode) -> SensitivityMap {
        // One layer; seven matrices cycled from the provided vectors as 1×d.
        let mut it = values.into_iter().cycle();
        SensitivityMap {
            matrices: PerMatrix::from_fn(1, |_| {
                let v = it.next().unwrap();
                crate::tensor::Tensor::new(vec![1, v.len()], v).unwrap()
            }),
            n_samples: 1,
            loss_mode,
            dataset_fingerprint: "test".into(),
        }
    }

    #[test]
    fn topk_hand_case() {
        // diag [3,1,4,1,5], κ=0.4 (d=5, k=2) → flat indices {2, 4}.
        let sens = map_from(vec![vec![3.0, 1.0, 4.0, 1.0, 5.0]], LossMode::FinalToken);
        let mask = build_topk_mask(&sens, 0.4, MaskProvenance::Task, false).unwrap();
        let m = mask.matrices.get(MatrixId::new(0, MatrixKind::Q));
        assert_eq!(m.indices, vec![2, 4]);
        assert_eq!(m.budget, 2);
    }

    #[test]
    fn kappa_zero_is_empty_and_bad_kappa_rejected() {
        let sens = map_from(vec![vec![1.0, 2.0]], LossMode::FinalToken);
        let mask = build_topk_mask(&sens, 0.0, MaskProvenance::Task, false).unwrap();
        assert_eq!(mask.popcount(), 0);
        assert!(matches!(
            build_topk_mask(&sens, 1.5, MaskProvenance::Task, false),
            Err(Error::KappaOutOfRange { .. })
        ));
    }

    #[test]
    fn mode_mismatch_refused_unless_forced() {
        let sens = map_from(vec![vec![1.0, 2.0]], LossMode::AllTokens);
        assert!(matches!(
            build_topk_mask(&sens, 0.5, MaskProvenance::Task, false),
            Err(Error::LossModeMismatch { .. })
        ));
        build_topk_mask(&sens, 0.5, MaskProvenance::Task, true).unwrap();
        build_topk_mask(&sens, 0.5, MaskProvenance::General, false).unwrap();
    }

    #[test]
    fn topk_attains_exhaustive_maximum() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let d = 12;
            let values: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let sens = map_from(vec![values.clone()], LossMode::FinalToken);
            let kappa = 4.0 / 12.0;
            let mask = build_topk_mask(&sens, kappa, MaskProvenance::Task, false).unwrap();
            let m = mask.matrices.get(MatrixId::new(0, MatrixKind::Q));
            let got: f64 = m.indices.iter().map(|&i| values[i as usize]).sum();
            let k = m.budget;
            let mut best = f64::MIN;
            for bits in 0u32..(1 << d) {
                if bits.count_ones() as usize != k {
                    continue;
                }
                let s: f64 = (0..d).filter(|i| bits & (1 << i) != 0).map(|i| values[i]).sum();
                best = best.max(s);
            }
            assert!(got >= best - 1e-12, "got {got}, exhaustive best {best}");
        }
    }

    #[test]
    fn monotone_nesting() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let sens = map_from(vec![values], LossMode::FinalToken);
        let mut prev: Option<SparsityMask> = None;
        for k in [0.0, 0.1, 0.25, 0.5, 0.75, 1.0] {
            let mask = build_topk_mask(&sens, k, MaskProvenance::Task, false).unwrap();
            if let Some(p) = &prev {
                for (id, pm) in p.matrices.iter() {
                    let cm = mask.matrices.get(id);
                    for i in &pm.indices {
                        assert!(cm.contains(*i), "κ nesting violated at {id}");
                    }
                }
            }
            prev = Some(mask);
        }
    }

    #[test]
    fn scale_invariance_of_selection() {
        let values = vec![0.5, 3.0, 0.1, 2.0, 2.5, 0.9];
        let scaled: Vec<f64> = values.iter().map(|v| v * 7.25).collect();
        let a = build_topk_mask(
            &map_from(vec![values], LossMode::FinalToken),
            0.5,
            MaskProvenance::Task,
            false,
        )
        .unwrap();
        let b = build_topk_mask(
            &map_from(vec![scaled], LossMode::FinalToken),
            0.5,
            MaskProvenance::Task,
            false,
        )
        .unwrap();
        let id = MatrixId::new(0, MatrixKind::Q);
        assert_eq!(a.matrices.get(id).indices, b.matrices.get(id).indices);
    }

    #[test]
    fn combine_hand_cases() {
        let mk = |indices: Vec<u32>, provenance| SparsityMask {
            matrices: PerMatrix::from_fn(1, |_| MaskMatrix {
                rows: 2,
                cols: 2,
                budget: indices.len(),
                indices: indices.clone(),
            }),
            kappa: 0.5,
            provenance,
            source: MaskSource::default(),
        };
        // task [1,1,0,0], general [1,0,0,0] → [0,1,0,0]
        let task = mk(vec![0, 1], MaskProvenance::Task);
        let general = mk(vec![0], MaskProvenance::General);
        let combined = combine_masks(&task, &general).unwrap();
        let id = MatrixId::new(0, MatrixKind::Q);
        assert_eq!(combined.matrices.get(id).indices, vec![1]);
        assert_eq!(combined.provenance, MaskProvenance::Combined);
        // general all-ones → empty
        let all = mk(vec![0, 1, 2, 3], MaskProvenance::General);
        assert_eq!(combine_masks(&task, &all).unwrap().popcount(), 0);
        // disjoint → combined == task
        let disjoint = mk(vec![2, 3], MaskProvenance::General);
        assert_eq!(
            combine_masks(&task, &disjoint).unwrap().matrices.get(id).indices,
            task.matrices.get(id).indices
        );
        // provenance enforcement
        assert!(combine_masks(&general, &general).is_err());
    }

    #[test]
    fn random_mask_budget_and_determinism() {
        let cfg = crate::model::tiny_test_config();
        let a = build_random_mask(&cfg, 0.01, 7).unwrap();
        let b = build_random_mask(&cfg, 0.01, 7).unwrap();
        assert_eq!(a, b);
        for (_, m) in a.matrices.iter() {
            assert_eq!(m.popcount(), budget_for(0.01, m.rows * m.cols));
            if let Some(&max) = m.indices.last() {
                assert!((max as usize) < m.rows * m.cols);
            }
        }
        assert_eq!(build_random_mask(&cfg, 0.0, 1).unwrap().popcount(), 0);
    }

    #[test]
    fn random_mask_seed_overlap_is_tiny() {
        // Two 10-entry uniform draws from a 10⁶-entry matrix share < 5
        // entries except with probability below 1e-20 (hypergeometric tail:
        // P(overlap ≥ 5) ≤ C(10,5)·(10/10⁶)⁵ ≈ 2.5e-23).
        use crate::data::TokenizerSpec;
        use crate::rope::RopeLayout;
        let cfg = ModelConfig {
            vocab_size: 3,
            d_model: 1000,
            n_layers: 1,
            n_heads: 1,
            d_ff: 1000,
            max_seq_len: 8,
            rope: crate::rope::RopeConfig {
                head_dim: 1000,
                base: 50_000.0,
                layout: RopeLayout::HalfSplit,
                enabled: true,
            },
            tokenizer: TokenizerSpec::Word {
                vocab: vec![crate::data::BOS_WORD.into(), "a".into(), "b".into()],
            },
        };
        let a = build_random_mask(&cfg, 1e-5, 1).unwrap();
        let b = build_random_mask(&cfg, 1e-5, 2).unwrap();
        let id = MatrixId::new(0, MatrixKind::Q);
        assert_eq!(a.matrices.get(id).popcount(), 10);
        let overlap = a
            .matrices
            .get(id)
            .indices
            .iter()
            .filter(|i| b.matrices.get(id).contains(**i))
            .count();
        assert!(overlap < 5, "overlap {overlap} across seeds");
    }

    #[test]
    fn random_mask_exclusion_is_honored() {
        let cfg = crate::model::tiny_test_config();
        let base = build_random_mask(&cfg, 0.05, 3).unwrap();
        let other = build_random_mask_excluding(&cfg, 0.05, 4, Some(&base)).unwrap();
        for (id, m) in other.matrices.iter() {
            for i in &m.indices {
                assert!(!base.matrices.get(id).contains(*i), "overlap at {id}");
            }
        }
    }

    // Independent oracle: exact rational elimination with i128 fractions.
    mod rational_oracle {
        #[derive(Clone, Copy)]
        pub struct Q {
            n: i128,
            d: i128,
        }

        fn gcd(a: i128, b: i128) -> i128 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }

        impl Q {
            pub fn int(n: i128) -> Q {
                Q { n, d: 1 }
            }
            pub fn is_zero(self) -> bool {
                self.n == 0
            }
            fn reduce(self) -> Q {
                let g = gcd(self.n, self.d).max(1);
                let sign = if self.d < 0 { -1 } else { 1 };
                Q {
                    n: sign * self.n / g,
                    d: sign * self.d / g,
                }
            }
            pub fn sub(self, other: Q) -> Q {
                Q {
                    n: self.n * other.d - other.n * self.d,
                    d: self.d * other.d,
                }
                .reduce()
            }
            pub fn mul(self, other: Q) -> Q {
                Q {
                    n: self.n * other.n,
                    d: self.d * other.d,
                }
                .reduce()
            }
            pub fn div(self, other: Q) -> Q {
                Q {
                    n: self.n * other.d,
                    d: self.d * other.n,
                }
                .reduce()
            }
        }

        /// Gaussian elimination over Q, returning the rank.
        pub fn rank(rows: usize, cols: usize, ones: &[u32]) -> usize {
            let mut a = vec![vec![Q::int(0); cols]; rows];
            for &flat in ones {
                a[flat as usize / cols][flat as usize % cols] = Q::int(1);
            }
            let mut rank = 0;
            let mut pr = 0;
            for col in 0..cols {
                if pr >= rows {
                    break;
                }
                let Some(found) = (pr..rows).find(|&r| !a[r][col].is_zero()) else {
                    continue;
                };
                a.swap(pr, found);
                let pivot = a[pr][col];
                for r in pr + 1..rows {
                    if a[r][col].is_zero() {
                        continue;
                    }
                    let f = a[r][col].div(pivot);
                    for c in col..cols {
                        a[r][c] = a[r][c].sub(f.mul(a[pr][c]));
                    }
                }
                pr += 1;
                rank += 1;
            }
            rank
        }
    }

    #[test]
    fn mask_rank_hand_cases() {
        let mk = |rows, cols, indices: Vec<u32>| MaskMatrix {
            rows,
            cols,
            budget: indices.len(),
            indices,
        };
        // [[1,0],[1,0]] → rank 1, 2 nonzero rows, 1 nonzero col, normalized 1.0.
        let m = mk(2, 2, vec![0, 2]);
        assert_eq!(mask_rank(&m), 1);
        // identity 3×3 → rank 3.
        assert_eq!(mask_rank(&mk(3, 3, vec![0, 4, 8])), 3);
        // empty → 0.
        assert_eq!(mask_rank(&mk(3, 3, vec![])), 0);
    }

    #[test]
    fn mask_rank_matches_rational_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..30 {
            let (rows, cols) = (50, 50);
            let mut set = std::collections::BTreeSet::new();
            while set.len() < 20 {
                set.insert(rng.random_range(0..(rows * cols)) as u32);
            }
            let indices: Vec<u32> = set.into_iter().collect();
            let m = MaskMatrix {
                rows,
                cols,
                budget: indices.len(),
                indices: indices.clone(),
            };
            let got = mask_rank(&m);
            let want = rational_oracle::rank(rows, cols, &indices);
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn rank_report_shapes_and_normalization() {
        let cfg = crate::model::tiny_test_config();
        let ckpt = ModelCheckpoint::<f32>::init(&cfg, 12).unwrap();
        let mask = build_random_mask(&cfg, 0.02, 9).unwrap();
        let report = mask_rank_report(&mask, &ckpt).unwrap();
        for e in &report.entries {
            assert!(e.mask_rank <= e.nonzero_rows.min(e.nonzero_cols));
            if let Some(n) = e.normalized_rank_min {
                assert!(n > 0.0 && n <= 1.0);
            }
            // Full-rank random weights at this scale.
            let (r, c) = cfg.matrix_shape(e.matrix.kind);
            assert_eq!(e.weight_rank, r.min(c));
        }
        // Empty mask → rank 0, normalized sentinel None.
        let empty = build_random_mask(&cfg, 0.0, 1).unwrap();
        let report = mask_rank_report(&empty, &ckpt).unwrap();
        assert!(report
            .entries
            .iter()
            .all(|e| e.mask_rank == 0 && e.normalized_rank_min.is_none()));
    }
}
