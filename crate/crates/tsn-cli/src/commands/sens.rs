use std::path::PathBuf;

use clap::Args;
use tsn_core::container::sensitivity_to_container;
use tsn_core::error::{Error, Result};
use tsn_core::fisher::estimate_fisher_diag_threaded;
use tsn_core::{LossMode, Sample};

use crate::io::{self, Ctx, RunInfo};

#[derive(Args)]
pub struct SensArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Belief-task dataset (JSONL); implies final-token loss.
    #[arg(long)]
    tom: Option<PathBuf>,
    /// Plain-text corpus split into windows; implies all-token loss.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Window length for corpus samples.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_loss_mode)]
    loss_mode: Option<LossMode>,
    /// Cap on the number of samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub(crate) fn parse_loss_mode(s: &str) -> std::result::Result<LossMode, String> {
    match s {
        "final-token" => Ok(LossMode::FinalToken),
        "all-tokens" => Ok(LossMode::AllTokens),
        other => Err(format!(
            "loss mode must be final-token or all-tokens, got {other:?}"
        )),
    }
}

pub fn run(args: SensArgs, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    let ckpt = io::load_checkpoint(&args.ckpt)?;
    let (samples, mode, input_path): (Vec<Sample>, LossMode, &PathBuf) =
        match (&args.tom, &args.corpus) {
            (Some(path), None) => {
                let ds = super::load_tom(path)?;
                ds.validate(&ckpt.config.tokenizer)?;
                let mut samples = ds.fisher_samples(&ckpt.config.tokenizer)?;
                samples.truncate(args.limit.unwrap_or(rc.n_task_samples));
                (samples, LossMode::FinalToken, path)
            }
            (None, Some(path)) => {
                let stream = super::corpus_stream(&ckpt, path)?;
                let window = args
                    .window
                    .unwrap_or(rc.ppl_window)
                    .min(ckpt.config.max_seq_len - 1);
                if stream.len() < window {
                    return Err(Error::StreamTooShort {
                        len: stream.len(),
                        window,
                    });
                }
                let bos = ckpt.config.tokenizer.bos_id();
                let limit = args.limit.unwrap_or(rc.n_general_windows);
                let samples: Vec<Sample> = stream
                    .chunks_exact(window)
                    .take(limit)
                    .map(|chunk| {
                        let mut tokens = Vec::with_capacity(window + 1);
                        tokens.push(bos);
                        tokens.extend_from_slice(chunk);
                        Sample::lm(tokens)
                    })
                    .collect();
                (samples, LossMode::AllTokens, path)
            }
            _ => {
                return Err(Error::Config(
                    "provide exactly one of --tom or --corpus".into(),
                ))
            }
        };
    if let Some(requested) = args.loss_mode {
        if requested != mode {
            return Err(Error::LossModeMismatch {
                context: format!("{requested} requested but the input implies {mode}"),
            });
        }
    }
    let map = estimate_fisher_diag_threaded(&ckpt, &samples, mode, ctx.threads())?;
    io::write_container(&args.out, &sensitivity_to_container(&map)?)?;
    RunInfo::new(
        "estimate-sensitivity",
        serde_json::json!({
            "loss_mode": mode.to_string(),
            "n_samples": map.n_samples,
            "out": args.out.display().to_string(),
        }),
    )
    .input(&args.ckpt)?
    .input(input_path)?
    .write_next_to(&args.out)?;
    println!(
        "estimated Fisher diagonal over {} samples ({mode}) -> {}",
        map.n_samples,
        args.out.display()
    );
    Ok(())
}
