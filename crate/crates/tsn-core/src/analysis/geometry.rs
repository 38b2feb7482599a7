//! Query/key geometry: norms of q, k_BOS, and the other keys, and the angles
//! between them, in three states — before rotary encoding, after it, and
//! after perturbation — aggregated over selected (layer, head, query) triples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, LayerCapture};
use crate::scalar::Scalar;
use crate::tensor::{angle_degrees, vector_norm};

use super::sinks::sink_shift_from_traces;

/// Which query rows enter the means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSelection {
    /// Rows flagged by the sink-shift detector at this threshold (the
    /// default protocol).
    SinkShifted { threshold: f64 },
    /// Every query row that sees at least one non-BOS key (t ≥ 1).
    All,
}

/// The five aggregate statistics in one state.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StateStats {
    pub q_norm: f64,
    pub k_bos_norm: f64,
    pub k_others_norm: f64,
    pub angle_q_kbos: f64,
    pub angle_q_kothers: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GeometryDeltas {
    pub q_norm: f64,
    pub k_bos_norm: f64,
    pub k_others_norm: f64,
    pub angle_q_kbos: f64,
    pub angle_q_kothers: f64,
}

fn deltas(a: &StateStats, b: &StateStats) -> GeometryDeltas {
    GeometryDeltas {
        q_norm: b.q_norm - a.q_norm,
        k_bos_norm: b.k_bos_norm - a.k_bos_norm,
        k_others_norm: b.k_others_norm - a.k_others_norm,
        angle_q_kbos: b.angle_q_kbos - a.angle_q_kbos,
        angle_q_kothers: b.angle_q_kothers - a.angle_q_kothers,
    }
}

/// Means over the selected triples. State 0 = before RoPE, 1 = after RoPE,
/// 2 = after perturbation (perturbed checkpoint, after RoPE).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryStats {
    pub n_triples: usize,
    pub states: [StateStats; 3],
    pub delta_01: GeometryDeltas,
    pub delta_12: GeometryDeltas,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    pub selection: RowSelection,
    pub global: GeometryStats,
    pub per_layer: Vec<GeometryStats>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: usize,
    sums: [StateStats; 3],
}

impl Acc {
    fn add(&mut self, state: usize, s: StateStats) {
        let dst = &mut self.sums[state];
        dst.q_norm += s.q_norm;
        dst.k_bos_norm += s.k_bos_norm;
        dst.k_others_norm += s.k_others_norm;
        dst.angle_q_kbos += s.angle_q_kbos;
        dst.angle_q_kothers += s.angle_q_kothers;
    }

    fn finish(self) -> GeometryStats {
        let n = self.n.max(1) as f64;
        let states = self.sums.map(|s| StateStats {
            q_norm: s.q_norm / n,
            k_bos_norm: s.k_bos_norm / n,
            k_others_norm: s.k_others_norm / n,
            angle_q_kbos: s.angle_q_kbos / n,
            angle_q_kothers: s.angle_q_kothers / n,
        });
        GeometryStats {
            n_triples: self.n,
            delta_01: deltas(&states[0], &states[1]),
            delta_12: deltas(&states[1], &states[2]),
            states,
        }
    }
}

/// One triple's statistics from a (Q, K) activation pair.
fn triple_stats<S: Scalar>(
    q: &crate::tensor::Tensor<S>,
    k: &crate::tensor::Tensor<S>,
    row: usize,
) -> Result<StateStats> {
    let qv = q.row(row);
    let k_bos = k.row(0);
    let mut k_others_norm = 0.0;
    let mut angle_q_kothers = 0.0;
    let others = row; // keys 1..=row
    for j in 1..=row {
        let kj = k.row(j);
        k_others_norm += vector_norm(kj);
        angle_q_kothers += angle_degrees(qv, kj)?;
    }
    Ok(StateStats {
        q_norm: vector_norm(qv),
        k_bos_norm: vector_norm(k_bos),
        k_others_norm: k_others_norm / others as f64,
        angle_q_kbos: angle_degrees(qv, k_bos)?,
        angle_q_kothers: angle_q_kothers / others as f64,
    })
}

fn state_views<'a, S: Scalar>(
    base: &'a LayerCapture<S>,
    pert: &'a LayerCapture<S>,
    head: usize,
) -> [(&'a crate::tensor::Tensor<S>, &'a crate::tensor::Tensor<S>); 3] {
    [
        (&base.q_pre[head], &base.k_pre[head]),
        (&base.q_rot[head], &base.k_rot[head]),
        (&pert.q_rot[head], &pert.k_rot[head]),
    ]
}

/// Aggregate geometry over selected triples of two captured traces on the
/// same input: the base trace supplies states 0 and 1, the perturbed trace
/// state 2.
pub fn geometry_report<S: Scalar>(
    base: &ForwardTrace<S>,
    perturbed: &ForwardTrace<S>,
    selection: RowSelection,
) -> Result<GeometryReport> {
    if base.tokens != perturbed.tokens {
        return Err(Error::TraceMismatch {
            context: "geometry traces ran on different inputs".into(),
        });
    }
    let bcap = base.captured()?;
    let pcap = perturbed.captured()?;
    if bcap.layers.len() != pcap.layers.len() {
        return Err(Error::TraceMismatch {
            context: "traces have different layer counts".into(),
        });
    }

    let shift = match selection {
        RowSelection::SinkShifted { threshold } => {
            Some(sink_shift_from_traces(base, perturbed, threshold)?)
        }
        RowSelection::All => None,
    };

    let t_len = base.tokens.len();
    let mut global = Acc::default();
    let mut per_layer: Vec<Acc> = vec![Acc::default(); bcap.layers.len()];

    for (layer, (bl, pl)) in bcap.layers.iter().zip(&pcap.layers).enumerate() {
        for head in 0..bl.q_pre.len() {
            let rows: Vec<usize> = match &shift {
                Some(report) => report
                    .shifted_rows(layer, head)
                    .iter()
                    .copied()
                    .filter(|&r| r >= 1)
                    .collect(),
                None => (1..t_len).collect(),
            };
            let views = state_views(bl, pl, head);
            for &row in &rows {
                let mut stats = [StateStats::default(); 3];
                let mut ok = true;
                for (state, (q, k)) in views.iter().enumerate() {
                    match triple_stats(*q, *k, row) {
                        Ok(s) => stats[state] = s,
                        Err(Error::DegenerateVector { .. }) => {
                            ok = false;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if !ok {
                    continue;
                }
                global.n += 1;
                per_layer[layer].n += 1;
                for (state, s) in stats.into_iter().enumerate() {
                    global.add(state, s);
                    per_layer[layer].add(state, s);
                }
            }
        }
    }

    Ok(GeometryReport {
        selection,
        global: global.finish(),
        per_layer: per_layer.into_iter().map(Acc::finish).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, tiny_test_config, ModelCheckpoint};
    use crate::tensor::Tensor;

    #[test]
    fn empty_mask_equivalent_has_zero_delta_12() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 31).unwrap();
        let tokens = [1u32, 4, 9, 2, 6];
        let a = forward(&ckpt, &tokens, true).unwrap();
        let b = forward(&ckpt, &tokens, true).unwrap();
        let report = geometry_report(&a, &b, RowSelection::All).unwrap();
        assert!(report.global.n_triples > 0);
        let d = report.global.delta_12;
        for v in [
            d.q_norm,
            d.k_bos_norm,
            d.k_others_norm,
            d.angle_q_kbos,
            d.angle_q_kothers,
        ] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn rotation_preserves_norms_in_delta_01() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 32).unwrap();
        let tokens = [3u32, 7, 7, 1, 9, 22];
        let a = forward(&ckpt, &tokens, true).unwrap();
        let b = forward(&ckpt, &tokens, true).unwrap();
        let report = geometry_report(&a, &b, RowSelection::All).unwrap();
        let d = report.global.delta_01;
        assert!(d.q_norm.abs() < 1e-6);
        assert!(d.k_bos_norm.abs() < 1e-6);
        assert!(d.k_others_norm.abs() < 1e-6);
    }

    #[test]
    fn identical_q_k_gives_zero_angle() {
        // acos is ill-conditioned at cos = 1: a one-ulp cosine error becomes
        // ~1e-6 degrees, so "zero" is asserted at that scale.
        let q = Tensor::from_rows(&[vec![1.0f64, 2.0], vec![0.5, -1.0]]);
        let s = triple_stats(&q, &q, 1).unwrap();
        assert!(s.angle_q_kothers.abs() < 1e-5);
        assert!(s.angle_q_kbos >= 0.0);
    }

    #[test]
    fn handmade_quarter_rotation_case() {
        // q = (1,0) at row 1, k_BOS = (1,0); rotating k_BOS by 90° sends the
        // angle 0° → 90° and leaves norms unchanged.
        let q = Tensor::from_rows(&[vec![1.0f64, 0.0], vec![1.0, 0.0]]);
        let k = q.clone();
        let before = triple_stats(&q, &k, 1).unwrap();
        assert!(before.angle_q_kbos.abs() < 1e-9);
        let k_rot = Tensor::from_rows(&[vec![0.0f64, 1.0], vec![1.0, 0.0]]);
        let after = triple_stats(&q, &k_rot, 1).unwrap();
        assert!((after.angle_q_kbos - 90.0).abs() < 1e-9);
        assert!((after.k_bos_norm - before.k_bos_norm).abs() < 1e-12);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 33).unwrap();
        let a = forward(&ckpt, &[1, 2, 3], true).unwrap();
        let b = forward(&ckpt, &[1, 2, 4], true).unwrap();
        assert!(matches!(
            geometry_report(&a, &b, RowSelection::All),
            Err(Error::TraceMismatch { .. })
        ));
        let c = forward(&ckpt, &[1, 2, 3], false).unwrap();
        assert!(matches!(
            geometry_report(&a, &c, RowSelection::All),
            Err(Error::TraceNotCaptured)
        ));
    }
}
