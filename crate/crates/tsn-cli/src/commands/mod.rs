pub mod analyze;
pub mod eval;
pub mod gen;
pub mod mask;
pub mod perturb;
pub mod report;
pub mod sens;
pub mod sweep;
pub mod train;

use std::path::Path;

use tsn_core::data::tom::ToMDataset;
use tsn_core::data::TokenizedCorpus;
use tsn_core::error::Result;
use tsn_core::Checkpoint32;

use crate::io;

/// Tokens for analyze/eval inputs: inline text or a file, BOS-prefixed.
pub fn input_tokens(
    ckpt: &Checkpoint32,
    text: &Option<String>,
    input_file: &Option<std::path::PathBuf>,
) -> Result<Vec<u32>> {
    let raw = match (text, input_file) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => io::read_text(p)?,
        _ => {
            return Err(tsn_core::Error::Config(
                "provide exactly one of --text or --input-file".into(),
            ))
        }
    };
    ckpt.config
        .tokenizer
        .encode_with_bos(raw.split_whitespace().collect::<Vec<_>>().join(" ").as_str())
}

pub fn load_tom(path: &Path) -> Result<ToMDataset> {
    ToMDataset::from_jsonl(&io::read_text(path)?)
}

/// Flatten a line corpus into one token stream under the checkpoint's
/// tokenizer (BOS tokens excluded from the stream).
pub fn corpus_stream(ckpt: &Checkpoint32, path: &Path) -> Result<Vec<u32>> {
    let text = io::read_text(path)?;
    let corpus = TokenizedCorpus::from_text(&text, &ckpt.config.tokenizer, usize::MAX)?;
    Ok(corpus.flat_stream(ckpt.config.tokenizer.bos_id()))
}
