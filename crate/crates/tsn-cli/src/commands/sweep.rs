use std::path::PathBuf;

use clap::Args;
use tsn_core::container::{sensitivity_from_container, Container};
use tsn_core::error::Result;
use tsn_core::eval::{kappa_sweep, KappaGrid, SweepEvalSpec};
use tsn_core::report::{sweep_csv, to_pretty_json};

use crate::io::{self, Ctx, RunInfo};

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    sens_task: PathBuf,
    #[arg(long)]
    sens_general: PathBuf,
    /// κ grid as start:stop:step, e.g. 0:5e-5:2e-6.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    tom: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    /// Also run localization at every grid point (slow).
    #[arg(long, default_value_t = false)]
    localization: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = false)]
    force: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn run(args: SweepArgs, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    let out_dir = io::resolve_out_dir(args.out_dir.clone());
    let ckpt = io::load_checkpoint(&args.ckpt)?;
    let sens_task = sensitivity_from_container(&Container::read_from(&args.sens_task)?)?;
    let sens_general = sensitivity_from_container(&Container::read_from(&args.sens_general)?)?;
    let grid: KappaGrid = args
        .grid
        .as_deref()
        .unwrap_or(rc.kappa_grid.as_str())
        .parse()?;
    let points = grid.points()?;
    let tom = super::load_tom(&args.tom)?;
    let stream = super::corpus_stream(&ckpt, &args.corpus)?;
    let window = args
        .window
        .unwrap_or(rc.ppl_window)
        .min(ckpt.config.max_seq_len - 1);
    let seed = args.seed.unwrap_or(rc.seed);
    let lengths = rc.localization_lengths.clone();
    let spec = SweepEvalSpec {
        tom: &tom,
        ppl_stream: &stream,
        ppl_window: window,
        localization: args
            .localization
            .then_some((stream.as_slice(), lengths.as_slice(), rc.localization_n, seed)),
        force_mode: args.force,
    };
    let result = kappa_sweep(&ckpt, &sens_task, &sens_general, &points, &spec)?;
    io::write_text(&out_dir.join("sweep.json"), &to_pretty_json(&result)?)?;
    io::write_text(&out_dir.join("sweep.csv"), &sweep_csv(&result))?;
    RunInfo::new(
        "sweep",
        serde_json::json!({
            "grid": format!("{}:{}:{}", grid.start, grid.stop, grid.step),
            "points": points.len(),
            "window": window,
        }),
    )
    .input(&args.ckpt)?
    .input(&args.sens_task)?
    .input(&args.sens_general)?
    .input(&args.tom)?
    .input(&args.corpus)?
    .seed(seed)
    .write_at(&out_dir.join("sweep.run.json"))?;
    for p in &result.points {
        println!(
            "κ {:>10.3e}: mean ToM {:.4}, ppl {:.4}, popcount {}",
            p.kappa, p.tom.mean_accuracy, p.perplexity, p.combined_popcount
        );
    }
    println!(
        "selected κ = {:.3e} (grid point {} of {})",
        result.selected_kappa,
        result.selected_index,
        result.points.len()
    );
    Ok(())
}
