use std::path::PathBuf;

use clap::Args;
use tsn_core::container::{
    checkpoint_to_container, mask_from_container, record_to_container, Container,
};
use tsn_core::error::Result;
use tsn_core::perturb::apply_mean_perturbation;

use crate::io::{self, Ctx, RunInfo};

#[derive(Args)]
pub struct PerturbArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out_ckpt: PathBuf,
    #[arg(long)]
    out_record: PathBuf,
}

pub fn run(args: PerturbArgs, _ctx: &Ctx) -> Result<()> {
    let ckpt = io::load_checkpoint(&args.ckpt)?;
    let mask = mask_from_container(&Container::read_from(&args.mask)?)?;
    let (perturbed, record) = apply_mean_perturbation(&ckpt, &mask)?;
    io::write_container(&args.out_ckpt, &checkpoint_to_container(&perturbed)?)?;
    io::write_container(&args.out_record, &record_to_container(&record)?)?;
    RunInfo::new(
        "perturb",
        serde_json::json!({
            "entries_changed": mask.popcount(),
            "out_ckpt": args.out_ckpt.display().to_string(),
            "out_record": args.out_record.display().to_string(),
        }),
    )
    .input(&args.ckpt)?
    .input(&args.mask)?
    .write_next_to(&args.out_ckpt)?;
    println!(
        "perturbed {} entries -> {} (record {})",
        mask.popcount(),
        args.out_ckpt.display(),
        args.out_record.display()
    );
    Ok(())
}
