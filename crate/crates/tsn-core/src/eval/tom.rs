//! Belief-task scoring: a prompt scores 1 iff the greedy next token after
//! `context + prompt` equals the single-token target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::tom::{ToMCondition, ToMDataset, ToMTask};
use crate::error::Result;
use crate::model::{forward, ModelCheckpoint};
use crate::scalar::Scalar;
use crate::tensor::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketScore {
    pub task: ToMTask,
    pub condition: ToMCondition,
    pub correct: usize,
    pub total: usize,
}

impl BucketScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToMScores {
    /// Only buckets that appear in the dataset, in (task, condition) order;
    /// absent conditions stay absent.
    pub buckets: Vec<BucketScore>,
    /// Macro average over present buckets.
    pub mean_accuracy: f64,
    /// Prompt-level accuracy.
    pub micro_accuracy: f64,
}

impl ToMScores {
    pub fn bucket(&self, task: ToMTask, condition: ToMCondition) -> Option<BucketScore> {
        self.buckets
            .iter()
            .find(|b| b.task == task && b.condition == condition)
            .copied()
    }
}

pub fn tom_eval<S: Scalar>(ckpt: &ModelCheckpoint<S>, dataset: &ToMDataset) -> Result<ToMScores> {
    let tokenizer = &ckpt.config.tokenizer;
    dataset.validate(tokenizer)?;
    let units = dataset.prompt_units(tokenizer)?;
    let mut counts: BTreeMap<(ToMTask, ToMCondition), (usize, usize)> = BTreeMap::new();
    let mut correct_total = 0usize;
    for unit in &units {
        let trace = forward(ckpt, &unit.tokens, false)?;
        let predicted = argmax(trace.final_logits()) as u32;
        let entry = counts.entry((unit.task, unit.condition)).or_insert((0, 0));
        entry.1 += 1;
        if predicted == unit.target {
            entry.0 += 1;
            correct_total += 1;
        }
    }
    let buckets: Vec<BucketScore> = counts
        .into_iter()
        .map(|((task, condition), (correct, total))| BucketScore {
            task,
            condition,
            correct,
            total,
        })
        .collect();
    let mean_accuracy =
        buckets.iter().map(BucketScore::accuracy).sum::<f64>() / buckets.len() as f64;
    Ok(ToMScores {
        mean_accuracy,
        micro_accuracy: correct_total as f64 / units.len() as f64,
        buckets,
    })
}
