//! `analyze` subcommands: every run writes `<name>.json` and `<name>.csv`
//! into the output directory plus a shared `run_info.json`.

use std::path::PathBuf;

use clap::{Args, Subcommand};

use tsn_core::analysis::{
    delta_attn_from_traces, geometry_report, sink_shift_from_traces, spectrum_report, RowSelection,
};
use tsn_core::container::{mask_from_container, Container};
use tsn_core::error::{Error, Result};
use tsn_core::fisher::{diag_dominance_report, sample_block_coords, sample_fisher_block};
use tsn_core::mask::mask_rank_report;
use tsn_core::model::{forward, MatrixKind};
use tsn_core::report::{
    diag_dominance_csv, geometry_csv, mask_rank_csv, sinks_csv, spectrum_csv, to_pretty_json,
};
use tsn_core::{LossMode, Sample};

use crate::io::{self, Ctx, RunInfo};

#[derive(Subcommand)]
pub enum Analyze {
    /// Activation frequency spectra and mask-frequency alignment.
    Spectrum(SpectrumArgs),
    /// Query/key norms and angles before RoPE, after RoPE, and after
    /// perturbation.
    Geometry(GeometryArgs),
    /// Attention-sink shift ratios per layer and head.
    Sinks(SinksArgs),
    /// Attention-score change decomposition for one layer/head.
    DeltaAttn(DeltaAttnArgs),
    /// Exact mask rank statistics against a checkpoint.
    MaskRank(MaskRankArgs),
    /// Sampled Fisher blocks: diagonal vs off-diagonal magnitudes.
    DiagDominance(DiagDominanceArgs),
}

#[derive(Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    input_file: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    post_rotation: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct GeometryArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    input_file: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Use every query row instead of sink-shifted rows.
    #[arg(long, default_value_t = false)]
    all_rows: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct SinksArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    input_file: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct DeltaAttnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    input_file: Option<PathBuf>,
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    head: usize,
    /// Frequency restriction for ΔQ; defaults to the head's dominant
    /// query frequency.
    #[arg(long)]
    freq_q: Option<usize>,
    /// Frequency restriction for ΔK; defaults to the head's dominant
    /// key frequency.
    #[arg(long)]
    freq_k: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct MaskRankArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct DiagDominanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Belief-task dataset (final-token loss) …
    #[arg(long)]
    tom: Option<PathBuf>,
    /// … or plain-text corpus (all-token loss over windows).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    /// Coordinates sampled per (layer, matrix).
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Dataset samples used for the block estimate.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn emit(
    out_dir: &std::path::Path,
    name: &str,
    json: String,
    csv: Option<String>,
) -> Result<()> {
    io::write_text(&out_dir.join(format!("{name}.json")), &json)?;
    if let Some(csv) = csv {
        io::write_text(&out_dir.join(format!("{name}.csv")), &csv)?;
    }
    Ok(())
}

pub fn run(cmd: Analyze, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    match cmd {
        Analyze::Spectrum(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let ckpt = io::load_checkpoint(&args.ckpt)?;
            let mask = mask_from_container(&Container::read_from(&args.mask)?)?;
            let tokens = super::input_tokens(&ckpt, &args.text, &args.input_file)?;
            let trace = forward(&ckpt, &tokens, true)?;
            let report =
                spectrum_report(trace.captured()?, &mask, &ckpt.config, args.post_rotation)?;
            emit(
                &out_dir,
                "spectrum",
                to_pretty_json(&report)?,
                Some(spectrum_csv(&report)),
            )?;
            RunInfo::new(
                "analyze spectrum",
                serde_json::json!({"post_rotation": args.post_rotation, "tokens": tokens.len()}),
            )
            .input(&args.ckpt)?
            .input(&args.mask)?
            .write_at(&out_dir.join("spectrum.run.json"))?;
            println!("wrote spectrum report to {}", out_dir.display());
            Ok(())
        }
        Analyze::Geometry(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let base = io::load_checkpoint(&args.ckpt)?;
            let pert = io::load_checkpoint(&args.perturbed)?;
            let tokens = super::input_tokens(&base, &args.text, &args.input_file)?;
            let bt = forward(&base, &tokens, true)?;
            let pt = forward(&pert, &tokens, true)?;
            let selection = if args.all_rows {
                RowSelection::All
            } else {
                RowSelection::SinkShifted {
                    threshold: args.threshold.unwrap_or(rc.sink_threshold),
                }
            };
            let report = geometry_report(&bt, &pt, selection)?;
            emit(
                &out_dir,
                "geometry",
                to_pretty_json(&report)?,
                Some(geometry_csv(&report)),
            )?;
            RunInfo::new(
                "analyze geometry",
                serde_json::json!({"selection": format!("{selection:?}"), "tokens": tokens.len()}),
            )
            .input(&args.ckpt)?
            .input(&args.perturbed)?
            .write_at(&out_dir.join("geometry.run.json"))?;
            println!(
                "geometry over {} triples -> {}",
                report.global.n_triples,
                out_dir.display()
            );
            Ok(())
        }
        Analyze::Sinks(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let base = io::load_checkpoint(&args.ckpt)?;
            let pert = io::load_checkpoint(&args.perturbed)?;
            let tokens = super::input_tokens(&base, &args.text, &args.input_file)?;
            let threshold = args.threshold.unwrap_or(rc.sink_threshold);
            let bt = forward(&base, &tokens, true)?;
            let pt = forward(&pert, &tokens, true)?;
            let report = sink_shift_from_traces(&bt, &pt, threshold)?;
            emit(
                &out_dir,
                "sinks",
                to_pretty_json(&report)?,
                Some(sinks_csv(&report)),
            )?;
            RunInfo::new(
                "analyze sinks",
                serde_json::json!({"threshold": threshold, "tokens": tokens.len()}),
            )
            .input(&args.ckpt)?
            .input(&args.perturbed)?
            .write_at(&out_dir.join("sinks.run.json"))?;
            for layer in &report.layers {
                println!(
                    "layer {}: {}/{} rows shifted (ratio {:.4})",
                    layer.layer, layer.shifted, layer.rows, layer.ratio
                );
            }
            Ok(())
        }
        Analyze::DeltaAttn(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let base = io::load_checkpoint(&args.ckpt)?;
            let pert = io::load_checkpoint(&args.perturbed)?;
            let tokens = super::input_tokens(&base, &args.text, &args.input_file)?;
            let bt = forward(&base, &tokens, true)?;
            let pt = forward(&pert, &tokens, true)?;
            // Default frequencies: the dominant spectrum entries of this head.
            let (f_q, f_k) = match (args.freq_q, args.freq_k) {
                (Some(q), Some(k)) => (q, k),
                (q, k) => {
                    let dom = |which: MatrixKind| -> Result<usize> {
                        let table = tsn_core::analysis::activation_spectrum(
                            bt.captured()?,
                            which,
                            &base.config,
                            true,
                        )?;
                        let hs = table
                            .heads
                            .iter()
                            .find(|h| h.layer == args.layer && h.head == args.head)
                            .ok_or_else(|| Error::IndexOutOfRange {
                                what: "layer/head",
                                index: args.layer,
                                limit: base.config.n_layers,
                            })?;
                        hs.dominant.ok_or_else(|| {
                            Error::Config("no dominant frequency (all-zero activations)".into())
                        })
                    };
                    (
                        match q {
                            Some(v) => v,
                            None => dom(MatrixKind::Q)?,
                        },
                        match k {
                            Some(v) => v,
                            None => dom(MatrixKind::K)?,
                        },
                    )
                }
            };
            let decomp = delta_attn_from_traces(
                &bt,
                &pt,
                args.layer,
                args.head,
                f_q,
                f_k,
                &base.config.rope,
            )?;
            let summary = serde_json::json!({
                "layer": args.layer,
                "head": args.head,
                "freq_q": f_q,
                "freq_k": f_k,
                "max_residual": decomp.max_residual,
                "max_abs_delta": decomp.max_abs_delta,
                "decomposition": decomp,
            });
            emit(
                &out_dir,
                "delta_attn",
                format!("{}\n", serde_json::to_string_pretty(&summary)?),
                None,
            )?;
            RunInfo::new(
                "analyze delta-attn",
                serde_json::json!({"layer": args.layer, "head": args.head, "freq_q": f_q, "freq_k": f_k}),
            )
            .input(&args.ckpt)?
            .input(&args.perturbed)?
            .write_at(&out_dir.join("delta_attn.run.json"))?;
            println!(
                "ΔA decomposition (layer {}, head {}): max |ΔA| {:.6}, residual {:.2e}",
                args.layer, args.head, decomp.max_abs_delta, decomp.max_residual
            );
            Ok(())
        }
        Analyze::MaskRank(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let ckpt = io::load_checkpoint(&args.ckpt)?;
            let mask = mask_from_container(&Container::read_from(&args.mask)?)?;
            let report = mask_rank_report(&mask, &ckpt)?;
            emit(
                &out_dir,
                "mask_rank",
                to_pretty_json(&report)?,
                Some(mask_rank_csv(&report)),
            )?;
            RunInfo::new("analyze mask-rank", serde_json::json!({}))
                .input(&args.ckpt)?
                .input(&args.mask)?
                .write_at(&out_dir.join("mask_rank.run.json"))?;
            println!("wrote mask-rank report to {}", out_dir.display());
            Ok(())
        }
        Analyze::DiagDominance(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let ckpt = io::load_checkpoint(&args.ckpt)?;
            let seed = args.seed.unwrap_or(rc.seed);
            let (samples, mode, input_path): (Vec<Sample>, LossMode, &PathBuf) =
                match (&args.tom, &args.corpus) {
                    (Some(path), None) => {
                        let ds = super::load_tom(path)?;
                        let mut s = ds.fisher_samples(&ckpt.config.tokenizer)?;
                        s.truncate(args.samples);
                        (s, LossMode::FinalToken, path)
                    }
                    (None, Some(path)) => {
                        let stream = super::corpus_stream(&ckpt, path)?;
                        let window = args
                            .window
                            .unwrap_or(32)
                            .min(ckpt.config.max_seq_len - 1);
                        let bos = ckpt.config.tokenizer.bos_id();
                        let s: Vec<Sample> = stream
                            .chunks_exact(window)
                            .take(args.samples)
                            .map(|chunk| {
                                let mut tokens = vec![bos];
                                tokens.extend_from_slice(chunk);
                                Sample::lm(tokens)
                            })
                            .collect();
                        (s, LossMode::AllTokens, path)
                    }
                    _ => {
                        return Err(Error::Config(
                            "provide exactly one of --tom or --corpus".into(),
                        ))
                    }
                };
            let coords = sample_block_coords(&ckpt.config, args.points, seed);
            let blocks = sample_fisher_block(&ckpt, &samples, &coords, mode)?;
            let reports: Vec<_> = blocks
                .iter()
                .map(diag_dominance_report)
                .collect::<Result<_>>()?;
            emit(
                &out_dir,
                "diag_dominance",
                to_pretty_json(&reports)?,
                Some(diag_dominance_csv(&reports)),
            )?;
            RunInfo::new(
                "analyze diag-dominance",
                serde_json::json!({
                    "points": args.points,
                    "samples": samples.len(),
                    "loss_mode": mode.to_string(),
                }),
            )
            .input(&args.ckpt)?
            .input(input_path)?
            .seed(seed)
            .write_at(&out_dir.join("diag_dominance.run.json"))?;
            println!("wrote diagonal-dominance report to {}", out_dir.display());
            Ok(())
        }
    }
}
