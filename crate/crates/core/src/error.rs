//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the hashing/retrieval pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot read wav file {path}: {reason}")]
    WavUnreadable { path: PathBuf, reason: String },

    #[error("unsupported wav encoding in {path}: {detail}")]
    WavUnsupported { path: PathBuf, detail: String },

    #[error("wav file {path} contains no audio samples")]
    EmptyAudio { path: PathBuf },

    #[error("clip has {len} samples but the analysis window needs {window}")]
    ClipTooShort { len: usize, window: usize },

    #[error("expected sample rate {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("hash length mismatch: expected {expected} bits, got {actual}")]
    BitsMismatch { expected: u32, actual: u32 },

    #[error("hash length must be one of 16/32/64/128, got {0}")]
    InvalidBits(u32),

    #[error("degenerate class balance: {n_similar} similar / {n_dissimilar} dissimilar pairs")]
    DegenerateBalance {
        n_similar: u64,
        n_dissimilar: u64,
    },

    #[error("label row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("batch needs at least 2 items, got {0}")]
    BatchTooSmall(usize),

    #[error("empty pair batch")]
    EmptyBatch,

    #[error("dataset needs at least {needed} classes, got {got}")]
    TooFewClasses { needed: usize, got: usize },

    #[error("backward already consumed this tape")]
    BackwardTwice,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("unsupported format version {found} in {path} (this build reads version {supported})")]
    BadVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("checksum mismatch in {path}; file is corrupt or truncated")]
    ChecksumMismatch { path: PathBuf },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("checkpoint descriptor hash does not match its architecture string")]
    DescriptorHashMismatch,

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest row {row}: {detail}")]
    Manifest { row: usize, detail: String },

    #[error("invalid architecture descriptor {descriptor:?}: {detail}")]
    BadArchitecture { descriptor: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
