use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left shape {left:?}, right shape {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{what}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("degenerate vector: zero-norm input to {op}")]
    DegenerateVector { op: &'static str },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("target alignment mismatch: {targets} targets for {tokens} tokens")]
    AlignmentMismatch { tokens: usize, targets: usize },

    #[error("empty dataset passed to {op}")]
    EmptyDataset { op: &'static str },

    #[error("sample {index} failed to tokenize: {reason}")]
    SampleTokenization { index: usize, reason: String },

    #[error("unknown word {word:?} not in vocabulary")]
    UnknownWord { word: String },

    #[error("kappa {kappa} outside [0, 1]")]
    KappaOutOfRange { kappa: f64 },

    #[error("mask provenance mismatch: expected {expected}, got {got}")]
    ProvenanceMismatch {
        expected: &'static str,
        got: String,
    },

    #[error("loss-mode mismatch: {context} (pass force to override)")]
    LossModeMismatch { context: String },

    #[error("degenerate mask: every entry of {matrix} is masked, no unmasked mean exists")]
    DegenerateMask { matrix: String },

    #[error("fingerprint mismatch in {what}: expected {expected}, got {got}")]
    FingerprintMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("trace/input mismatch: {context}")]
    TraceMismatch { context: String },

    #[error("trace was not captured; rerun forward with capture enabled")]
    TraceNotCaptured,

    #[error("attention row {row} of layer {layer} head {head} sums to {sum}, not a probability row")]
    NonNormalizedRow {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },

    #[error("token stream of length {len} shorter than window {window}")]
    StreamTooShort { len: usize, window: usize },

    #[error("corpus too short to sample {needed} segments of length {length}")]
    InsufficientCorpus { needed: usize, length: usize },

    #[error("dataset example {index}: {reason}")]
    DatasetExample { index: usize, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("container format error: {0}")]
    Container(String),

    #[error("exact rank elimination overflowed on matrix {matrix}")]
    RankOverflow { matrix: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
