//! Seeded generation of the toy datasets and model configs.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use tsn_core::data::grammar;
use tsn_core::error::Result;
use tsn_core::report::to_pretty_json;

use crate::io::{self, Ctx, RunInfo};

#[derive(Subcommand)]
pub enum GenData {
    /// Emit a model-config JSON (toy preset, optionally resized).
    ModelConfig(ModelConfigArgs),
    /// Generate the belief-task dataset (JSONL, all eight buckets).
    Tom(TomArgs),
    /// Generate the general-language corpus (plain text, one line each).
    Corpus(CorpusArgs),
    /// Merge belief-task training lines with a general corpus.
    TrainingMix(TrainingMixArgs),
}

#[derive(Args)]
pub struct ModelConfigArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    rope_base: Option<f64>,
}

#[derive(Args)]
pub struct TomArgs {
    #[arg(long)]
    out: PathBuf,
    /// Examples per (task, condition) bucket.
    #[arg(long, default_value_t = 25)]
    per_bucket: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct CorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    lines: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainingMixArgs {
    #[arg(long)]
    tom: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cmd: GenData, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    match cmd {
        GenData::ModelConfig(args) => {
            let mut cfg = grammar::toy_model_config();
            if let Some(v) = args.layers {
                cfg.n_layers = v;
            }
            if let Some(v) = args.d_model {
                cfg.d_model = v;
            }
            if let Some(v) = args.heads {
                cfg.n_heads = v;
            }
            if let Some(v) = args.d_ff {
                cfg.d_ff = v;
            }
            if let Some(v) = args.max_seq_len {
                cfg.max_seq_len = v;
            }
            cfg.rope.base = args.rope_base.unwrap_or(rc.rope_base);
            cfg.rope.layout = rc.rope_layout;
            cfg.rope.head_dim = cfg.d_model / cfg.n_heads.max(1);
            cfg.validate()?;
            io::write_text(&args.out, &to_pretty_json(&cfg)?)?;
            RunInfo::new(
                "gen-data model-config",
                serde_json::json!({"out": args.out.display().to_string()}),
            )
            .write_next_to(&args.out)?;
            println!("wrote model config to {}", args.out.display());
            Ok(())
        }
        GenData::Tom(args) => {
            let seed = args.seed.unwrap_or(rc.seed);
            let ds = grammar::generate_tom_dataset(args.per_bucket, seed);
            ds.validate(&grammar::toy_tokenizer())?;
            io::write_text(&args.out, &ds.to_jsonl())?;
            RunInfo::new(
                "gen-data tom",
                serde_json::json!({
                    "out": args.out.display().to_string(),
                    "per_bucket": args.per_bucket,
                }),
            )
            .seed(seed)
            .write_next_to(&args.out)?;
            println!(
                "wrote {} belief-task examples to {}",
                ds.examples.len(),
                args.out.display()
            );
            Ok(())
        }
        GenData::Corpus(args) => {
            let seed = args.seed.unwrap_or(rc.seed);
            let text = grammar::generate_general_corpus(args.lines, seed);
            io::write_text(&args.out, &text)?;
            RunInfo::new(
                "gen-data corpus",
                serde_json::json!({
                    "out": args.out.display().to_string(),
                    "lines": args.lines,
                }),
            )
            .seed(seed)
            .write_next_to(&args.out)?;
            println!("wrote {} corpus lines to {}", args.lines, args.out.display());
            Ok(())
        }
        GenData::TrainingMix(args) => {
            let tom = super::load_tom(&args.tom)?;
            let corpus = io::read_text(&args.corpus)?;
            let mixed = grammar::mixed_training_text(&tom, &corpus);
            io::write_text(&args.out, &format!("{mixed}\n"))?;
            RunInfo::new(
                "gen-data training-mix",
                serde_json::json!({"out": args.out.display().to_string()}),
            )
            .input(&args.tom)?
            .input(&args.corpus)?
            .write_next_to(&args.out)?;
            println!("wrote training mix to {}", args.out.display());
            Ok(())
        }
    }
}
