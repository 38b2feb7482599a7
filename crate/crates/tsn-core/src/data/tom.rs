//! Belief-task dataset schema: line-delimited JSON records of a story
//! context plus fill-in-the-blank prompts with single-token targets.

use serde::{Deserialize, Serialize};

use crate::data::TokenizerSpec;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::util::fingerprint_token_sets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToMTask {
    UnexpectedContents,
    UnexpectedTransfer,
}

impl std::fmt::Display for ToMTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToMTask::UnexpectedContents => f.write_str("unexpected_contents"),
            ToMTask::UnexpectedTransfer => f.write_str("unexpected_transfer"),
        }
    }
}

/// Story condition: false belief plus the true-belief controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToMCondition {
    /// False belief.
    FB,
    /// Correct label (contents task only).
    CL,
    /// Informed protagonist.
    IP,
    /// Open container (contents task only).
    OC,
    /// No transfer (transfer task only).
    NT,
    /// Present protagonist (transfer task only).
    PP,
}

impl ToMCondition {
    pub fn consistent_with(self, task: ToMTask) -> bool {
        match self {
            ToMCondition::FB | ToMCondition::IP => true,
            ToMCondition::CL | ToMCondition::OC => task == ToMTask::UnexpectedContents,
            ToMCondition::NT | ToMCondition::PP => task == ToMTask::UnexpectedTransfer,
        }
    }
}

impl std::fmt::Display for ToMCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToMPrompt {
    pub text: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToMExample {
    pub context: String,
    pub prompts: Vec<ToMPrompt>,
    pub task: ToMTask,
    pub condition: ToMCondition,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ToMDataset {
    pub examples: Vec<ToMExample>,
}

impl ToMDataset {
    /// Structural and tokenizer-level validation: at least one prompt per
    /// example, condition/task consistency, and single-token targets.
    pub fn validate(&self, tokenizer: &TokenizerSpec) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::EmptyDataset { op: "tom dataset" });
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.prompts.is_empty() {
                return Err(Error::DatasetExample {
                    index: i,
                    reason: "no prompts".into(),
                });
            }
            if !ex.condition.consistent_with(ex.task) {
                return Err(Error::DatasetExample {
                    index: i,
                    reason: format!("condition {} invalid under {}", ex.condition, ex.task),
                });
            }
            for p in &ex.prompts {
                tokenizer.encode_single(&p.target).map_err(|e| Error::DatasetExample {
                    index: i,
                    reason: e.to_string(),
                })?;
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("tom example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: ToMExample = serde_json::from_str(line).map_err(|e| Error::DatasetExample {
                index: i,
                reason: e.to_string(),
            })?;
            examples.push(ex);
        }
        Ok(ToMDataset { examples })
    }

    /// Flatten to (tokens, target-id) scoring units, one per prompt.
    pub fn prompt_units(&self, tokenizer: &TokenizerSpec) -> Result<Vec<ToMUnit>> {
        let mut out = Vec::new();
        for (i, ex) in self.examples.iter().enumerate() {
            for p in &ex.prompts {
                let text = format!("{} {}", ex.context, p.text);
                let tokens =
                    tokenizer
                        .encode_with_bos(&text)
                        .map_err(|e| Error::SampleTokenization {
                            index: i,
                            reason: e.to_string(),
                        })?;
                let target = tokenizer.encode_single(&p.target).map_err(|e| {
                    Error::DatasetExample {
                        index: i,
                        reason: e.to_string(),
                    }
                })?;
                out.push(ToMUnit {
                    example: i,
                    task: ex.task,
                    condition: ex.condition,
                    tokens,
                    target,
                });
            }
        }
        Ok(out)
    }

    /// Final-token-loss samples for Fisher estimation.
    pub fn fisher_samples(&self, tokenizer: &TokenizerSpec) -> Result<Vec<Sample>> {
        Ok(self
            .prompt_units(tokenizer)?
            .into_iter()
            .map(|u| Sample::final_token(u.tokens, u.target))
            .collect())
    }

    /// Content hash over the tokenized prompt units.
    pub fn fingerprint(&self, tokenizer: &TokenizerSpec) -> Result<String> {
        let units = self.prompt_units(tokenizer)?;
        let mut sets: Vec<Vec<u32>> = Vec::with_capacity(units.len());
        for u in units {
            let mut v = u.tokens;
            v.push(u.target);
            sets.push(v);
        }
        Ok(fingerprint_token_sets(sets.iter().map(Vec::as_slice)))
    }

    /// One training line per prompt: `context prompt target .`
    pub fn training_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for ex in &self.examples {
            for p in &ex.prompts {
                out.push(format!("{} {} {} .", ex.context, p.text, p.target));
            }
        }
        out
    }
}

/// One scored prompt instance.
#[derive(Debug, Clone)]
pub struct ToMUnit {
    pub example: usize,
    pub task: ToMTask,
    pub condition: ToMCondition,
    pub tokens: Vec<u32>,
    pub target: u32,
}
