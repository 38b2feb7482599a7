//! `tsn` — train a toy RoPE decoder, estimate Fisher-diagonal sensitivity,
//! build sparse masks, perturb, and analyze the mechanistic fallout.
//!
//! Every command writes its outputs to fresh paths (inputs are never
//! overwritten), emits a reproducibility stanza next to them, and reports
//! failures as a machine-readable JSON record on stderr with a nonzero exit.

mod commands;
mod io;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tsn", version, about)]
struct Cli {
    /// Optional run-config JSON supplying defaults for thresholds, windows,
    /// grids, and seeds.
    #[arg(long, global = true)]
    run_config: Option<std::path::PathBuf>,

    /// Worker threads for per-sample gradient fan-out (or TSN_THREADS).
    /// Deterministic mode pins this to 1.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate toy datasets, corpora, and model configs.
    #[command(subcommand)]
    GenData(commands::gen::GenData),
    /// Train the toy decoder on a line corpus.
    Train(commands::train::TrainArgs),
    /// Estimate the empirical Fisher diagonal over a dataset.
    EstimateSensitivity(commands::sens::SensArgs),
    /// Build task/general/combined/random sparsity masks.
    BuildMask(commands::mask::MaskArgs),
    /// Apply the mean-value perturbation under a mask.
    Perturb(commands::perturb::PerturbArgs),
    /// Mechanistic analyses over traces, masks, and Fisher blocks.
    #[command(subcommand)]
    Analyze(commands::analyze::Analyze),
    /// Behavioral evaluations.
    #[command(subcommand)]
    Eval(commands::eval::Eval),
    /// Sweep the κ grid with combined masks and report the most
    /// degrading point.
    Sweep(commands::sweep::SweepArgs),
    /// Merge the JSON reports of an output directory into one bundle.
    Report(commands::report::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let ctx = io::Ctx {
        run_config: cli.run_config.clone(),
        threads: cli.threads,
    };
    let result = match cli.command {
        Command::GenData(args) => commands::gen::run(args, &ctx),
        Command::Train(args) => commands::train::run(args, &ctx),
        Command::EstimateSensitivity(args) => commands::sens::run(args, &ctx),
        Command::BuildMask(args) => commands::mask::run(args, &ctx),
        Command::Perturb(args) => commands::perturb::run(args, &ctx),
        Command::Analyze(args) => commands::analyze::run(args, &ctx),
        Command::Eval(args) => commands::eval::run(args, &ctx),
        Command::Sweep(args) => commands::sweep::run(args, &ctx),
        Command::Report(args) => commands::report::run(args, &ctx),
    };
    if let Err(err) = result {
        let record = serde_json::json!({
            "error": {
                "kind": io::error_kind(&err),
                "message": err.to_string(),
            }
        });
        eprintln!("{record}");
        std::process::exit(1);
    }
}
