//! Tokenizers and toy dataset plumbing.

pub mod grammar;
pub mod tom;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokenizer definition, embedded in model configs and checkpoint manifests
/// so every artifact is self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TokenizerSpec {
    /// Raw bytes 0..=255 plus a BOS token with id 256.
    Byte,
    /// Whitespace-separated word vocabulary; id 0 must be the BOS marker.
    Word { vocab: Vec<String> },
}

pub const BOS_WORD: &str = "<bos>";

impl TokenizerSpec {
    pub fn vocab_size(&self) -> usize {
        match self {
            TokenizerSpec::Byte => 257,
            TokenizerSpec::Word { vocab } => vocab.len(),
        }
    }

    pub fn bos_id(&self) -> u32 {
        match self {
            TokenizerSpec::Byte => 256,
            TokenizerSpec::Word { .. } => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TokenizerSpec::Word { vocab } = self {
            if vocab.first().map(String::as_str) != Some(BOS_WORD) {
                return Err(Error::Config(format!(
                    "word vocab must start with {BOS_WORD:?}"
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for w in vocab {
                if !seen.insert(w) {
                    return Err(Error::Config(format!("duplicate vocab word {w:?}")));
                }
            }
        }
        Ok(())
    }

    /// Encode text without a BOS prefix.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        match self {
            TokenizerSpec::Byte => Ok(text.bytes().map(u32::from).collect()),
            TokenizerSpec::Word { vocab } => {
                let mut ids = Vec::new();
                for word in text.split_whitespace() {
                    let id = vocab
                        .iter()
                        .position(|w| w == word)
                        .ok_or_else(|| Error::UnknownWord { word: word.into() })?;
                    ids.push(id as u32);
                }
                Ok(ids)
            }
        }
    }

    /// Encode text with the BOS token prepended.
    pub fn encode_with_bos(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = vec![self.bos_id()];
        ids.extend(self.encode(text)?);
        Ok(ids)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        match self {
            TokenizerSpec::Byte => {
                let bytes: Vec<u8> = ids
                    .iter()
                    .filter(|&&id| id < 256)
                    .map(|&id| id as u8)
                    .collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            TokenizerSpec::Word { vocab } => ids
                .iter()
                .filter_map(|&id| vocab.get(id as usize).cloned())
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    /// Encode a single word that must map to exactly one token.
    pub fn encode_single(&self, text: &str) -> Result<u32> {
        let ids = self.encode(text)?;
        if ids.len() != 1 {
            return Err(Error::Config(format!(
                "{text:?} is {} tokens, expected a single-token target",
                ids.len()
            )));
        }
        Ok(ids[0])
    }
}

/// A tokenized training corpus: one token sequence per input line, each
/// starting with BOS. Lines shorter than two tokens are dropped since they
/// carry no next-token signal.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    pub lines: Vec<Vec<u32>>,
}

impl TokenizedCorpus {
    pub fn from_text(text: &str, tokenizer: &TokenizerSpec, max_len: usize) -> Result<Self> {
        let mut lines = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut ids = tokenizer
                .encode_with_bos(line)
                .map_err(|e| Error::SampleTokenization {
                    index: idx,
                    reason: e.to_string(),
                })?;
            ids.truncate(max_len);
            if ids.len() >= 2 {
                lines.push(ids);
            }
        }
        Ok(TokenizedCorpus { lines })
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// All line tokens flattened into one stream (no BOS tokens), used for
    /// perplexity windows and localization sampling.
    pub fn flat_stream(&self, bos_id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        for line in &self.lines {
            out.extend(line.iter().copied().filter(|&t| t != bos_id));
        }
        out
    }
}
