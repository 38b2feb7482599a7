//! Attention-sink shift detection: a query row is flagged when its attention
//! on the first (BOS) column changes by more than the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Captured, ForwardTrace};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSinkStats {
    pub head: usize,
    pub rows: usize,
    pub shifted: usize,
    pub ratio: f64,
    pub mean_signed_change: f64,
    /// Query rows whose BOS attention moved beyond the threshold.
    pub shifted_rows: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSinkStats {
    pub layer: usize,
    pub rows: usize,
    pub shifted: usize,
    pub ratio: f64,
    pub mean_signed_change: f64,
    pub heads: Vec<HeadSinkStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinkShiftReport {
    pub threshold: f64,
    pub layers: Vec<LayerSinkStats>,
}

impl SinkShiftReport {
    pub fn shifted_rows(&self, layer: usize, head: usize) -> &[usize] {
        &self.layers[layer].heads[head].shifted_rows
    }
}

fn validate_probability_rows<S: Scalar>(attn: &Tensor<S>, layer: usize, head: usize) -> Result<()> {
    for i in 0..attn.rows() {
        let sum: f64 = attn.row(i).iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::NonNormalizedRow {
                layer,
                head,
                row: i,
                sum,
            });
        }
    }
    Ok(())
}

/// Compare per-layer, per-head attention maps before and after perturbation.
pub fn sink_shift<S: Scalar>(
    base: &[Vec<Tensor<S>>],
    perturbed: &[Vec<Tensor<S>>],
    threshold: f64,
) -> Result<SinkShiftReport> {
    if base.len() != perturbed.len() {
        return Err(Error::DimensionMismatch {
            op: "sink_shift",
            left: vec![base.len()],
            right: vec![perturbed.len()],
        });
    }
    let mut layers = Vec::with_capacity(base.len());
    for (layer, (bl, pl)) in base.iter().zip(perturbed).enumerate() {
        if bl.len() != pl.len() {
            return Err(Error::DimensionMismatch {
                op: "sink_shift",
                left: vec![layer, bl.len()],
                right: vec![layer, pl.len()],
            });
        }
        let mut heads = Vec::with_capacity(bl.len());
        let mut layer_rows = 0usize;
        let mut layer_shifted = 0usize;
        let mut layer_signed = 0.0f64;
        for (head, (b, p)) in bl.iter().zip(pl).enumerate() {
            if b.shape() != p.shape() {
                return Err(Error::DimensionMismatch {
                    op: "sink_shift",
                    left: b.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            validate_probability_rows(b, layer, head)?;
            validate_probability_rows(p, layer, head)?;
            let rows = b.rows();
            let mut shifted_rows = Vec::new();
            let mut signed = 0.0f64;
            for i in 0..rows {
                let delta = p.at(i, 0).as_f64() - b.at(i, 0).as_f64();
                signed += delta;
                if delta.abs() > threshold {
                    shifted_rows.push(i);
                }
            }
            layer_rows += rows;
            layer_shifted += shifted_rows.len();
            layer_signed += signed;
            heads.push(HeadSinkStats {
                head,
                rows,
                shifted: shifted_rows.len(),
                ratio: shifted_rows.len() as f64 / rows as f64,
                mean_signed_change: signed / rows as f64,
                shifted_rows,
            });
        }
        layers.push(LayerSinkStats {
            layer,
            rows: layer_rows,
            shifted: layer_shifted,
            ratio: layer_shifted as f64 / layer_rows as f64,
            mean_signed_change: layer_signed / layer_rows as f64,
            heads,
        });
    }
    Ok(SinkShiftReport { threshold, layers })
}

/// Sink-shift report from two captured traces over the same input.
pub fn sink_shift_from_traces<S: Scalar>(
    base: &ForwardTrace<S>,
    perturbed: &ForwardTrace<S>,
    threshold: f64,
) -> Result<SinkShiftReport> {
    if base.tokens != perturbed.tokens {
        return Err(Error::TraceMismatch {
            context: "sink_shift traces ran on different inputs".into(),
        });
    }
    let attn_of = |c: &Captured<S>| -> Vec<Vec<Tensor<S>>> {
        c.layers.iter().map(|l| l.attn.clone()).collect()
    };
    sink_shift(
        &attn_of(base.captured()?),
        &attn_of(perturbed.captured()?),
        threshold,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_map(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows)
    }

    /// Causal map with a chosen BOS column; remainder spread over the rest.
    fn map_with_bos(bos: &[f64]) -> Tensor<f64> {
        let t = bos.len();
        let mut rows = Vec::new();
        for (i, &b) in bos.iter().enumerate() {
            let mut row = vec![0.0; t];
            if i == 0 {
                row[0] = 1.0;
            } else {
                row[0] = b;
                let rest = (1.0 - b) / i as f64;
                for cell in row.iter_mut().take(i + 1).skip(1) {
                    *cell = rest;
                }
            }
            rows.push(row);
        }
        row_map(&rows)
    }

    #[test]
    fn threshold_hand_cases() {
        // 0.900 → 0.895 (|Δ| = 0.005) not shifted; 0.90 → 0.85 shifted.
        let base = vec![vec![map_with_bos(&[1.0, 0.900, 0.90])]];
        let pert = vec![vec![map_with_bos(&[1.0, 0.895, 0.85])]];
        let report = sink_shift(&base, &pert, 0.01).unwrap();
        let head = &report.layers[0].heads[0];
        assert_eq!(head.shifted_rows, vec![2]);
        assert_eq!(head.shifted, 1);
        assert!((head.ratio - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_maps_have_zero_ratio() {
        let maps = vec![vec![map_with_bos(&[1.0, 0.5, 0.4, 0.3])]];
        let report = sink_shift(&maps, &maps, 0.01).unwrap();
        assert_eq!(report.layers[0].shifted, 0);
        assert_eq!(report.layers[0].ratio, 0.0);
        assert_eq!(report.layers[0].mean_signed_change, 0.0);
    }

    #[test]
    fn planted_ratio_is_exact_and_threshold_monotone() {
        // 10 rows; plant |Δ| of 0.02 on rows 3, 5, 9 and 0.005 on row 7.
        let mut base_bos = vec![1.0];
        base_bos.extend(std::iter::repeat_n(0.5, 9));
        let mut pert_bos = base_bos.clone();
        pert_bos[3] = 0.52;
        pert_bos[5] = 0.48;
        pert_bos[9] = 0.53;
        pert_bos[7] = 0.505;
        let base = vec![vec![map_with_bos(&base_bos)]];
        let pert = vec![vec![map_with_bos(&pert_bos)]];
        let at_001 = sink_shift(&base, &pert, 0.01).unwrap();
        assert_eq!(at_001.layers[0].heads[0].shifted_rows, vec![3, 5, 9]);
        assert!((at_001.layers[0].ratio - 0.3).abs() < 1e-12);
        // Larger thresholds flag a subset.
        let mut prev: Option<Vec<usize>> = None;
        for t in [0.001, 0.01, 0.025, 0.1] {
            let rows = sink_shift(&base, &pert, t).unwrap().layers[0].heads[0]
                .shifted_rows
                .clone();
            if let Some(p) = &prev {
                assert!(rows.iter().all(|r| p.contains(r)), "not nested at {t}");
            }
            prev = Some(rows);
        }
    }

    #[test]
    fn non_normalized_rows_rejected() {
        let good = map_with_bos(&[1.0, 0.6, 0.5]);
        let mut bad = good.clone();
        *bad.at_mut(1, 1) = 0.7; // row now sums to 1.3
        let a = vec![vec![good]];
        let b = vec![vec![bad]];
        assert!(matches!(
            sink_shift(&a, &b, 0.01),
            Err(Error::NonNormalizedRow { row: 1, .. })
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = vec![vec![map_with_bos(&[1.0, 0.5])]];
        let b = vec![vec![map_with_bos(&[1.0, 0.5, 0.2])]];
        assert!(matches!(
            sink_shift(&a, &b, 0.01),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
