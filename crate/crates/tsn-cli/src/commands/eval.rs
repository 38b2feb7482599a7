use std::path::PathBuf;

use clap::{Args, Subcommand};
use tsn_core::error::{Error, Result};
use tsn_core::eval::{localization_eval, perplexity, tom_eval};
use tsn_core::report::{localization_csv, to_pretty_json, tom_csv};

use crate::io::{self, Ctx, RunInfo};

#[derive(Subcommand)]
pub enum Eval {
    /// Perplexity over non-overlapping windows of a corpus.
    Ppl(PplArgs),
    /// Verbatim-repeat localization curve.
    Localization(LocalizationArgs),
    /// Belief-task accuracy per (task, condition).
    Tom(TomArgs),
}

#[derive(Args)]
pub struct PplArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct LocalizationArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated segment lengths, e.g. 2,4,6,8,10.
    #[arg(long)]
    lengths: Option<String>,
    /// Cases per length.
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct TomArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn run(cmd: Eval, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    match cmd {
        Eval::Ppl(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let ckpt = io::load_checkpoint(&args.ckpt)?;
            let stream = super::corpus_stream(&ckpt, &args.corpus)?;
            let window = args
                .window
                .unwrap_or(rc.ppl_window)
                .min(ckpt.config.max_seq_len - 1);
            let ppl = perplexity(&ckpt, &stream, window)?;
            let summary = serde_json::json!({"perplexity": ppl, "window": window, "tokens": stream.len()});
            io::write_text(
                &out_dir.join("ppl.json"),
                &format!("{}\n", serde_json::to_string_pretty(&summary)?),
            )?;
            RunInfo::new("eval ppl", summary)
                .input(&args.ckpt)?
                .input(&args.corpus)?
                .write_at(&out_dir.join("ppl.run.json"))?;
            println!("perplexity {ppl:.4} (window {window})");
            Ok(())
        }
        Eval::Localization(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let ckpt = io::load_checkpoint(&args.ckpt)?;
            let stream = super::corpus_stream(&ckpt, &args.corpus)?;
            let lengths: Vec<usize> = match &args.lengths {
                Some(csv) => csv
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse()
                            .map_err(|e| Error::Config(format!("bad length {p:?}: {e}")))
                    })
                    .collect::<Result<_>>()?,
                None => rc.localization_lengths.clone(),
            };
            let cases = args.cases.unwrap_or(rc.localization_n);
            let seed = args.seed.unwrap_or(rc.seed);
            let curve = localization_eval(&ckpt, &stream, &lengths, cases, seed)?;
            io::write_text(&out_dir.join("localization.json"), &to_pretty_json(&curve)?)?;
            io::write_text(&out_dir.join("localization.csv"), &localization_csv(&curve))?;
            RunInfo::new(
                "eval localization",
                serde_json::json!({"lengths": lengths, "cases": cases}),
            )
            .input(&args.ckpt)?
            .input(&args.corpus)?
            .seed(seed)
            .write_at(&out_dir.join("localization.run.json"))?;
            for (n, s, _) in &curve.per_length {
                println!("length {n}: mean similarity {s:.4}");
            }
            Ok(())
        }
        Eval::Tom(args) => {
            let out_dir = io::resolve_out_dir(args.out_dir.clone());
            let ckpt = io::load_checkpoint(&args.ckpt)?;
            let ds = super::load_tom(&args.dataset)?;
            let scores = tom_eval(&ckpt, &ds)?;
            io::write_text(&out_dir.join("tom.json"), &to_pretty_json(&scores)?)?;
            io::write_text(&out_dir.join("tom.csv"), &tom_csv(&scores))?;
            RunInfo::new(
                "eval tom",
                serde_json::json!({"examples": ds.examples.len()}),
            )
            .input(&args.ckpt)?
            .input(&args.dataset)?
            .write_at(&out_dir.join("tom.run.json"))?;
            for b in &scores.buckets {
                println!(
                    "{}/{}: {}/{} = {:.4}",
                    b.task,
                    b.condition,
                    b.correct,
                    b.total,
                    b.accuracy()
                );
            }
            println!("macro mean accuracy {:.4}", scores.mean_accuracy);
            Ok(())
        }
    }
}
