use std::path::PathBuf;

use clap::Args;
use tsn_core::container::{
    mask_from_container, mask_to_container, sensitivity_from_container, Container,
};
use tsn_core::error::{Error, Result};
use tsn_core::mask::{
    build_random_mask_excluding, build_topk_mask, combine_masks, MaskProvenance,
};

use crate::io::{self, Ctx, RunInfo};

#[derive(Args)]
pub struct MaskArgs {
    /// task | general | combined | random
    #[arg(long)]
    kind: String,
    /// Sensitivity map (task/general kinds).
    #[arg(long)]
    sens: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Task mask artifact (combined kind).
    #[arg(long)]
    task: Option<PathBuf>,
    /// General mask artifact (combined kind).
    #[arg(long)]
    general: Option<PathBuf>,
    /// Checkpoint supplying shapes (random kind).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mask whose entries the random baseline must avoid (opt-in).
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Allow building from a sensitivity map with a mismatched loss mode.
    #[arg(long, default_value_t = false)]
    force: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: MaskArgs, ctx: &Ctx) -> Result<()> {
    let rc = ctx.run_config()?;
    let mut info_inputs: Vec<PathBuf> = Vec::new();
    let mut seed_used: Option<u64> = None;
    let mask = match args.kind.as_str() {
        kind @ ("task" | "general") => {
            let sens_path = args
                .sens
                .as_ref()
                .ok_or_else(|| Error::Config("task/general masks need --sens".into()))?;
            let kappa = args
                .kappa
                .ok_or_else(|| Error::Config("task/general masks need --kappa".into()))?;
            let sens = sensitivity_from_container(&Container::read_from(sens_path)?)?;
            info_inputs.push(sens_path.clone());
            let provenance = if kind == "task" {
                MaskProvenance::Task
            } else {
                MaskProvenance::General
            };
            build_topk_mask(&sens, kappa, provenance, args.force)?
        }
        "combined" => {
            let task_path = args
                .task
                .as_ref()
                .ok_or_else(|| Error::Config("combined masks need --task".into()))?;
            let general_path = args
                .general
                .as_ref()
                .ok_or_else(|| Error::Config("combined masks need --general".into()))?;
            let task = mask_from_container(&Container::read_from(task_path)?)?;
            let general = mask_from_container(&Container::read_from(general_path)?)?;
            info_inputs.push(task_path.clone());
            info_inputs.push(general_path.clone());
            combine_masks(&task, &general)?
        }
        "random" => {
            let ckpt_path = args
                .ckpt
                .as_ref()
                .ok_or_else(|| Error::Config("random masks need --ckpt for shapes".into()))?;
            let kappa = args
                .kappa
                .ok_or_else(|| Error::Config("random masks need --kappa".into()))?;
            let ckpt = io::load_checkpoint(ckpt_path)?;
            info_inputs.push(ckpt_path.clone());
            let seed = args.seed.unwrap_or(rc.seed);
            seed_used = Some(seed);
            let exclude = match &args.exclude {
                Some(path) => {
                    info_inputs.push(path.clone());
                    Some(mask_from_container(&Container::read_from(path)?)?)
                }
                None => None,
            };
            build_random_mask_excluding(&ckpt.config, kappa, seed, exclude.as_ref())?
        }
        other => {
            return Err(Error::Config(format!(
                "mask kind must be task|general|combined|random, got {other:?}"
            )))
        }
    };
    io::write_container(&args.out, &mask_to_container(&mask)?)?;
    let mut info = RunInfo::new(
        "build-mask",
        serde_json::json!({
            "kind": args.kind,
            "kappa": mask.kappa,
            "popcount": mask.popcount(),
            "out": args.out.display().to_string(),
        }),
    );
    for path in &info_inputs {
        info = info.input(path)?;
    }
    if let Some(seed) = seed_used {
        info = info.seed(seed);
    }
    info.write_next_to(&args.out)?;
    println!(
        "built {} mask (κ = {}, popcount {}) -> {}",
        mask.provenance,
        mask.kappa,
        mask.popcount(),
        args.out.display()
    );
    Ok(())
}
