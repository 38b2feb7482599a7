//! Report emission: every analysis lands as pretty JSON plus a flat CSV.
//! Column schemas are documented in the repository README and kept stable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{GeometryReport, SinkShiftReport, SpectrumReport};
use crate::error::Result;
use crate::eval::{LocalizationCurve, SweepResult, ToMScores};
use crate::fisher::DiagDominanceReport;
use crate::mask::MaskRankReport;

/// Bundle of every report kind a run may produce; the `report` command merges
/// whatever JSON artifacts an output directory holds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisReport {
    pub spectrum: Option<SpectrumReport>,
    pub sinks: Option<SinkShiftReport>,
    pub geometry: Option<GeometryReport>,
    pub mask_rank: Option<MaskRankReport>,
    pub diag_dominance: Option<Vec<DiagDominanceReport>>,
    pub perplexity: Option<f64>,
    pub tom: Option<ToMScores>,
    pub localization: Option<LocalizationCurve>,
    pub sweep: Option<SweepResult>,
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn push_row(out: &mut String, cells: &[String]) {
    let _ = writeln!(out, "{}", cells.join(","));
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "".into(), T::to_string)
}

/// layer,head,matrix,frequency,mean_activation_norm,masked_count,dominant,alignment_distance
pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from(
        "layer,head,matrix,frequency,mean_activation_norm,masked_count,dominant,alignment_distance\n",
    );
    for e in &report.entries {
        for (m, &norm) in e.norms.iter().enumerate() {
            push_row(
                &mut out,
                &[
                    e.layer.to_string(),
                    e.head.to_string(),
                    e.matrix.name().into(),
                    m.to_string(),
                    format!("{norm}"),
                    e.masked_per_freq[m].to_string(),
                    (e.dominant == Some(m)).to_string(),
                    fmt_opt(&e.alignment_distance),
                ],
            );
        }
    }
    out
}

/// layer,head,rows,shifted,shift_ratio,mean_signed_change ("all" aggregates a layer)
pub fn sinks_csv(report: &SinkShiftReport) -> String {
    let mut out = String::from("layer,head,rows,shifted,shift_ratio,mean_signed_change\n");
    for l in &report.layers {
        push_row(
            &mut out,
            &[
                l.layer.to_string(),
                "all".into(),
                l.rows.to_string(),
                l.shifted.to_string(),
                format!("{}", l.ratio),
                format!("{}", l.mean_signed_change),
            ],
        );
        for h in &l.heads {
            push_row(
                &mut out,
                &[
                    l.layer.to_string(),
                    h.head.to_string(),
                    h.rows.to_string(),
                    h.shifted.to_string(),
                    format!("{}", h.ratio),
                    format!("{}", h.mean_signed_change),
                ],
            );
        }
    }
    out
}

/// scope,layer,n_triples,stat,before_rope,after_rope,after_perturbation,change_01,change_12
pub fn geometry_csv(report: &GeometryReport) -> String {
    let mut out = String::from(
        "scope,layer,n_triples,stat,before_rope,after_rope,after_perturbation,change_01,change_12\n",
    );
    let mut emit = |scope: &str, layer: String, stats: &crate::analysis::GeometryStats| {
        let rows: [(&str, [f64; 3], f64, f64); 5] = [
            (
                "q_norm",
                stats.states.map(|s| s.q_norm),
                stats.delta_01.q_norm,
                stats.delta_12.q_norm,
            ),
            (
                "k_bos_norm",
                stats.states.map(|s| s.k_bos_norm),
                stats.delta_01.k_bos_norm,
                stats.delta_12.k_bos_norm,
            ),
            (
                "k_others_norm",
                stats.states.map(|s| s.k_others_norm),
                stats.delta_01.k_others_norm,
                stats.delta_12.k_others_norm,
            ),
            (
                "angle_q_kbos",
                stats.states.map(|s| s.angle_q_kbos),
                stats.delta_01.angle_q_kbos,
                stats.delta_12.angle_q_kbos,
            ),
            (
                "angle_q_kothers",
                stats.states.map(|s| s.angle_q_kothers),
                stats.delta_01.angle_q_kothers,
                stats.delta_12.angle_q_kothers,
            ),
        ];
        for (stat, states, d01, d12) in rows {
            push_row(
                &mut out,
                &[
                    scope.into(),
                    layer.clone(),
                    stats.n_triples.to_string(),
                    stat.into(),
                    format!("{}", states[0]),
                    format!("{}", states[1]),
                    format!("{}", states[2]),
                    format!("{d01}"),
                    format!("{d12}"),
                ],
            );
        }
    };
    emit("global", "".into(), &report.global);
    for (i, stats) in report.per_layer.iter().enumerate() {
        emit("layer", i.to_string(), stats);
    }
    out
}

/// layer,matrix,popcount,weight_rank,mask_rank,nonzero_rows,nonzero_cols,normalized_min,normalized_rows,normalized_cols
pub fn mask_rank_csv(report: &MaskRankReport) -> String {
    let mut out = String::from(
        "layer,matrix,popcount,weight_rank,mask_rank,nonzero_rows,nonzero_cols,normalized_min,normalized_rows,normalized_cols\n",
    );
    for e in &report.entries {
        push_row(
            &mut out,
            &[
                e.matrix.layer.to_string(),
                e.matrix.kind.name().into(),
                e.popcount.to_string(),
                e.weight_rank.to_string(),
                e.mask_rank.to_string(),
                e.nonzero_rows.to_string(),
                e.nonzero_cols.to_string(),
                fmt_opt(&e.normalized_rank_min),
                fmt_opt(&e.normalized_rank_rows),
                fmt_opt(&e.normalized_rank_cols),
            ],
        );
    }
    out
}

/// layer,matrix,n_coords,mean_abs_diag,mean_abs_offdiag,ratio
pub fn diag_dominance_csv(reports: &[DiagDominanceReport]) -> String {
    let mut out = String::from("layer,matrix,n_coords,mean_abs_diag,mean_abs_offdiag,ratio\n");
    for r in reports {
        push_row(
            &mut out,
            &[
                r.matrix.layer.to_string(),
                r.matrix.kind.name().into(),
                r.n_coords.to_string(),
                format!("{}", r.mean_abs_diag),
                format!("{}", r.mean_abs_offdiag),
                if r.ratio.is_finite() {
                    format!("{}", r.ratio)
                } else {
                    "inf".into()
                },
            ],
        );
    }
    out
}

/// task,condition,correct,total,accuracy
pub fn tom_csv(scores: &ToMScores) -> String {
    let mut out = String::from("task,condition,correct,total,accuracy\n");
    for b in &scores.buckets {
        push_row(
            &mut out,
            &[
                b.task.to_string(),
                b.condition.to_string(),
                b.correct.to_string(),
                b.total.to_string(),
                format!("{}", b.accuracy()),
            ],
        );
    }
    push_row(
        &mut out,
        &[
            "all".into(),
            "macro-mean".into(),
            "".into(),
            "".into(),
            format!("{}", scores.mean_accuracy),
        ],
    );
    out
}

/// length,mean_similarity,cases
pub fn localization_csv(curve: &LocalizationCurve) -> String {
    let mut out = String::from("length,mean_similarity,cases\n");
    for (n, s, cases) in &curve.per_length {
        push_row(
            &mut out,
            &[n.to_string(), format!("{s}"), cases.to_string()],
        );
    }
    out
}

/// kappa,mean_tom_accuracy,micro_tom_accuracy,perplexity,combined_popcount,selected
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(
        "kappa,mean_tom_accuracy,micro_tom_accuracy,perplexity,combined_popcount,selected\n",
    );
    for (i, p) in result.points.iter().enumerate() {
        push_row(
            &mut out,
            &[
                format!("{}", p.kappa),
                format!("{}", p.tom.mean_accuracy),
                format!("{}", p.tom.micro_accuracy),
                format!("{}", p.perplexity),
                p.combined_popcount.to_string(),
                (i == result.selected_index).to_string(),
            ],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_serializes() {
        let r = AnalysisReport::default();
        let json = to_pretty_json(&r).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert!(back.spectrum.is_none() && back.sweep.is_none());
    }

    #[test]
    fn csv_headers_are_stable() {
        assert!(spectrum_csv(&SpectrumReport {
            post_rotation: false,
            entries: vec![]
        })
        .starts_with("layer,head,matrix,frequency"));
        assert!(sinks_csv(&SinkShiftReport {
            threshold: 0.01,
            layers: vec![]
        })
        .starts_with("layer,head,rows"));
    }
}
