//! Perplexity over non-overlapping windows of a token stream.

use crate::error::{Error, Result};
use crate::model::forward;
use crate::model::ModelCheckpoint;
use crate::scalar::Scalar;

/// `exp(mean next-token NLL)` over consecutive non-overlapping windows.
/// Each window is scored with a BOS prefix, so all `window` tokens of every
/// window receive a prediction.
pub fn perplexity<S: Scalar>(
    ckpt: &ModelCheckpoint<S>,
    stream: &[u32],
    window: usize,
) -> Result<f64> {
    if window == 0 || stream.len() < window {
        return Err(Error::StreamTooShort {
            len: stream.len(),
            window,
        });
    }
    if window + 1 > ckpt.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: window + 1,
            max: ckpt.config.max_seq_len,
        });
    }
    let bos = ckpt.config.tokenizer.bos_id();
    let mut total_nll = 0.0f64;
    let mut count = 0usize;
    for chunk in stream.chunks_exact(window) {
        let mut seq = Vec::with_capacity(window + 1);
        seq.push(bos);
        seq.extend_from_slice(chunk);
        let trace = forward(ckpt, &seq, false)?;
        // Position t predicts seq[t+1]; that covers every window token.
        for lp in &trace.next_logprob {
            total_nll -= lp;
            count += 1;
        }
    }
    Ok((total_nll / count as f64).exp())
}
