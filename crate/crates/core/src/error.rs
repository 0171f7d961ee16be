//! Error type shared by every module in this crate.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by tensor kernels, model I/O, decoding, and instrumentation.
#[derive(Debug)]
pub enum Error {
    /// A matrix-vector product was asked to combine incompatible shapes.
    MatVecShape { rows: usize, cols: usize, dim: usize },
    /// Two vectors that must share a dimension do not.
    DimMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// An operation that needs at least one element received none.
    EmptyInput(&'static str),
    /// Normalized entropy is undefined for vocabularies smaller than two.
    DegenerateVocab { vocab: usize },
    /// Model configuration violates a structural constraint.
    InvalidConfig(String),
    /// Decode policy violates a structural constraint.
    InvalidPolicy(String),
    /// A prompt token id is outside the vocabulary.
    TokenOutOfRange { id: u32, vocab: usize },
    /// The KV cache already holds `max_seq_len` positions.
    CacheOverflow { max_seq_len: usize },
    /// Prompt plus requested new tokens exceed the maximum sequence length.
    SequenceTooLong { needed: usize, max_seq_len: usize },
    /// The prompt carries no text tokens.
    EmptyPrompt,
    /// Non-finite value where finite data is required.
    NonFinite(&'static str),
    /// A binary file carries the wrong magic bytes.
    BadMagic { path: PathBuf, found: Vec<u8> },
    /// A weight file carries an unsupported format version.
    BadVersion { path: PathBuf, found: u32 },
    /// A binary file ends before its header-implied payload does.
    Truncated {
        path: PathBuf,
        expected_bytes: u64,
        got_bytes: u64,
    },
    /// A binary file has bytes past its header-implied payload.
    TrailingBytes { path: PathBuf, extra_bytes: u64 },
    /// A trace row does not carry one uncertainty value per probe layer.
    TraceArity { expected: usize, got: usize },
    /// A trace row is missing the probe value for `layer` and cannot be recorded.
    TraceMissingProbe { layer: usize },
    /// A trace file failed to parse.
    TraceParse { line: usize, detail: String },
    /// Benchmark precondition violation.
    BadBenchSpec(String),
    /// I/O failure tagged with the path being accessed.
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MatVecShape { rows, cols, dim } => write!(
                f,
                "matvec shape mismatch: matrix is {rows}x{cols}, vector has dim {dim}"
            ),
            Error::DimMismatch { op, expected, got } => {
                write!(f, "{op}: dimension mismatch, expected {expected}, got {got}")
            }
            Error::EmptyInput(op) => write!(f, "{op}: empty input"),
            Error::DegenerateVocab { vocab } => write!(
                f,
                "normalized entropy needs a vocabulary of at least 2, got {vocab}"
            ),
            Error::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            Error::InvalidPolicy(msg) => write!(f, "invalid decode policy: {msg}"),
            Error::TokenOutOfRange { id, vocab } => {
                write!(f, "token id {id} is outside the vocabulary (size {vocab})")
            }
            Error::CacheOverflow { max_seq_len } => {
                write!(f, "KV cache overflow: max_seq_len is {max_seq_len}")
            }
            Error::SequenceTooLong { needed, max_seq_len } => write!(
                f,
                "sequence of {needed} positions exceeds max_seq_len {max_seq_len}"
            ),
            Error::EmptyPrompt => write!(f, "prompt must contain at least one token"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::BadMagic { path, found } => write!(
                f,
                "{}: bad magic bytes {:?}",
                path.display(),
                String::from_utf8_lossy(found)
            ),
            Error::BadVersion { path, found } => {
                write!(f, "{}: unsupported format version {found}", path.display())
            }
            Error::Truncated {
                path,
                expected_bytes,
                got_bytes,
            } => write!(
                f,
                "{}: truncated, expected {expected_bytes} payload bytes, got {got_bytes}",
                path.display()
            ),
            Error::TrailingBytes { path, extra_bytes } => write!(
                f,
                "{}: {extra_bytes} trailing bytes past the expected payload",
                path.display()
            ),
            Error::TraceArity { expected, got } => write!(
                f,
                "trace row arity mismatch: expected {expected} uncertainty values, got {got}"
            ),
            Error::TraceMissingProbe { layer } => write!(
                f,
                "trace row lacks an uncertainty value for layer {layer}; record only fully probed steps"
            ),
            Error::TraceParse { line, detail } => {
                write!(f, "trace parse error at line {line}: {detail}")
            }
            Error::BadBenchSpec(msg) => write!(f, "invalid benchmark spec: {msg}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
