use std::path::PathBuf;

use clap::Args;
use tsn_core::error::Result;
use tsn_core::report::{to_pretty_json, AnalysisReport};

use crate::io::{self, Ctx, RunInfo};

#[derive(Args)]
pub struct ReportArgs {
    /// Directory containing the per-analysis JSON artifacts.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_if_present<T: serde::de::DeserializeOwned>(path: PathBuf) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = io::read_text(&path)?;
    Ok(Some(serde_json::from_str(&text)?))
}

pub fn run(args: ReportArgs, _ctx: &Ctx) -> Result<()> {
    let dir = &args.dir;
    let ppl_summary: Option<serde_json::Value> = load_if_present(dir.join("ppl.json"))?;
    let bundle = AnalysisReport {
        spectrum: load_if_present(dir.join("spectrum.json"))?,
        sinks: load_if_present(dir.join("sinks.json"))?,
        geometry: load_if_present(dir.join("geometry.json"))?,
        mask_rank: load_if_present(dir.join("mask_rank.json"))?,
        diag_dominance: load_if_present(dir.join("diag_dominance.json"))?,
        perplexity: ppl_summary
            .as_ref()
            .and_then(|v| v.get("perplexity"))
            .and_then(serde_json::Value::as_f64),
        tom: load_if_present(dir.join("tom.json"))?,
        localization: load_if_present(dir.join("localization.json"))?,
        sweep: load_if_present(dir.join("sweep.json"))?,
    };
    io::write_text(&args.out, &to_pretty_json(&bundle)?)?;
    RunInfo::new(
        "report",
        serde_json::json!({"dir": dir.display().to_string()}),
    )
    .write_next_to(&args.out)?;
    let present: Vec<&str> = [
        ("spectrum", bundle.spectrum.is_some()),
        ("sinks", bundle.sinks.is_some()),
        ("geometry", bundle.geometry.is_some()),
        ("mask_rank", bundle.mask_rank.is_some()),
        ("diag_dominance", bundle.diag_dominance.is_some()),
        ("perplexity", bundle.perplexity.is_some()),
        ("tom", bundle.tom.is_some()),
        ("localization", bundle.localization.is_some()),
        ("sweep", bundle.sweep.is_some()),
    ]
    .iter()
    .filter(|(_, present)| *present)
    .map(|(name, _)| *name)
    .collect();
    println!(
        "bundled [{}] into {}",
        present.join(", "),
        args.out.display()
    );
    Ok(())
}
