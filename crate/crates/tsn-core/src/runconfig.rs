//! Experiment configuration file: validated on load, unknown keys rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::KappaGrid;
use crate::model::{LossMode, TrainConfig};
use crate::rope::RopeLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Path to the model-config JSON used by `train`.
    pub model_config_path: Option<String>,
    pub rope_base: f64,
    pub rope_layout: RopeLayout,
    /// `start:stop:step`.
    pub kappa_grid: String,
    pub task_loss_mode: LossMode,
    pub general_loss_mode: LossMode,
    pub seed: u64,
    /// Attention-sink shift threshold on the BOS column.
    pub sink_threshold: f64,
    /// Cases per segment length in the localization task.
    pub localization_n: usize,
    pub localization_lengths: Vec<usize>,
    /// Sample budgets for sensitivity estimation.
    pub n_task_samples: usize,
    pub n_general_windows: usize,
    pub ppl_window: usize,
    pub deterministic: bool,
    pub threads: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_config_path: None,
            rope_base: crate::rope::DEFAULT_ROPE_BASE,
            rope_layout: RopeLayout::HalfSplit,
            kappa_grid: "0:5e-5:2e-6".into(),
            task_loss_mode: LossMode::FinalToken,
            general_loss_mode: LossMode::AllTokens,
            seed: 0,
            sink_threshold: crate::analysis::DEFAULT_SINK_THRESHOLD,
            localization_n: 100,
            localization_lengths: crate::eval::default_lengths(),
            n_task_samples: 512,
            n_general_windows: 2048,
            ppl_window: 2048,
            deterministic: true,
            threads: 1,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rope_base > 1.0) {
            return Err(Error::Config(format!(
                "rope_base must be > 1, got {}",
                self.rope_base
            )));
        }
        self.kappa_grid.parse::<KappaGrid>()?;
        if !(self.sink_threshold >= 0.0) {
            return Err(Error::Config("sink_threshold must be >= 0".into()));
        }
        for &v in [&self.localization_n, &self.ppl_window, &self.threads] {
            if v == 0 {
                return Err(Error::Config("counts in run config must be positive".into()));
            }
        }
        if self.localization_lengths.is_empty() {
            return Err(Error::Config("localization_lengths must be nonempty".into()));
        }
        if self.deterministic && self.threads != 1 {
            return Err(Error::Config(
                "deterministic mode requires threads = 1".into(),
            ));
        }
        Ok(())
    }
}
