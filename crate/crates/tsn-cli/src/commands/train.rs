use std::path::PathBuf;

use clap::Args;
use tsn_core::container::{checkpoint_to_container, model_config_from_json};
use tsn_core::data::TokenizedCorpus;
use tsn_core::error::Result;
use tsn_core::{train_toy, Checkpoint32};

use crate::io::{self, Ctx, RunInfo};

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    model_config: PathBuf,
    /// Plain-text corpus, one training line per text line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

pub fn run(args: TrainArgs, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    let seed = args.seed.unwrap_or(rc.seed);
    let cfg = model_config_from_json(&io::read_text(&args.model_config)?)?;
    let mut train_cfg = rc.train.clone();
    if let Some(lr) = args.lr {
        train_cfg.lr = lr;
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    let text = io::read_text(&args.corpus)?;
    let corpus = TokenizedCorpus::from_text(&text, &cfg.tokenizer, cfg.max_seq_len)?;
    let ckpt: Checkpoint32 = train_toy(&cfg, &train_cfg, &corpus, args.steps, seed)?;
    io::write_container(&args.out, &checkpoint_to_container(&ckpt)?)?;
    RunInfo::new(
        "train",
        serde_json::json!({
            "steps": args.steps,
            "lr": train_cfg.lr,
            "batch_size": train_cfg.batch_size,
            "out": args.out.display().to_string(),
        }),
    )
    .input(&args.model_config)?
    .input(&args.corpus)?
    .seed(seed)
    .write_next_to(&args.out)?;
    match ckpt.meta.final_loss {
        Some(loss) => println!(
            "trained {} steps (final batch loss {loss:.4}) -> {}",
            args.steps,
            args.out.display()
        ),
        None => println!("wrote seeded initialization -> {}", args.out.display()),
    }
    Ok(())
}
