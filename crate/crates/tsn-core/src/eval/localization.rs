//! Contextual localization: ask the model to repeat a sampled segment
//! verbatim and score the fraction of input tokens that appear anywhere in
//! the generated output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::grammar::{repeat_prompt_prefix, repeat_prompt_suffix};
use crate::error::{Error, Result};
use crate::model::{greedy_continue, ModelCheckpoint};
use crate::scalar::Scalar;

/// `S = |{positions i : x_i ∈ set(Y)}| / n`; every occurrence of a repeated
/// input token counts.
pub fn similarity(input: &[u32], generated: &[u32]) -> f64 {
    if input.is_empty() {
        return 0.0;
    }
    let present: std::collections::HashSet<u32> = generated.iter().copied().collect();
    let hits = input.iter().filter(|t| present.contains(t)).count();
    hits as f64 / input.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationCase {
    pub input: Vec<u32>,
    pub generated: Vec<u32>,
    pub similarity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationCurve {
    /// (segment length, mean similarity, cases evaluated).
    pub per_length: Vec<(usize, f64, usize)>,
    pub generation_budget_note: String,
}

/// Default segment lengths: 2,4,6,8,10 then 20..100 by tens.
pub fn default_lengths() -> Vec<usize> {
    let mut v = vec![2, 4, 6, 8, 10];
    v.extend((2..=10).map(|i| i * 10));
    v
}

/// Sample `n_per_length` segments per length from the corpus stream, wrap
/// each in the repeat prompt, greedy-decode up to `2n+8` tokens, and average
/// the similarity scores.
pub fn localization_eval<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    corpus: &[u32],
    lengths: &[usize],
    n_per_length: usize,
    seed: u64,
) -> Result<LocalizationCurve> {
    let tok = &ckpt.config.tokenizer;
    let prefix = tok.encode(repeat_prompt_prefix())?;
    let suffix = tok.encode(repeat_prompt_suffix())?;
    let bos = tok.bos_id();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_length = Vec::new();
    for &n in lengths {
        if corpus.len() < n {
            return Err(Error::InsufficientCorpus {
                needed: n_per_length,
                length: n,
            });
        }
        let prompt_len = 1 + prefix.len() + n + suffix.len();
        if prompt_len + 1 > ckpt.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: prompt_len + 1,
                max: ckpt.config.max_seq_len,
            });
        }
        let mut total = 0.0;
        for _ in 0..n_per_length {
            let start = rng.random_range(0..=corpus.len() - n);
            let segment = &corpus[start..start + n];
            let mut prompt = Vec::with_capacity(prompt_len);
            prompt.push(bos);
            prompt.extend_from_slice(&prefix);
            prompt.extend_from_slice(segment);
            prompt.extend_from_slice(&suffix);
            let generated = greedy_continue(ckpt, &prompt, 2 * n + 8)?;
            total += similarity(segment, &generated);
        }
        per_length.push((n, total / n_per_length as f64, n_per_length));
    }
    Ok(LocalizationCurve {
        per_length,
        generation_budget_note: "greedy, 2n+8 tokens per case".into(),
    })
}
