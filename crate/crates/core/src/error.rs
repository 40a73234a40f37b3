use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {what} at step {step}, channel {channel}")]
    Numeric {
        what: &'static str,
        step: usize,
        channel: usize,
    },

    #[error("token id {id} at position {position} is out of range for vocabulary of size {vocab}")]
    TokenOutOfRange {
        position: usize,
        id: usize,
        vocab: usize,
    },

    #[error("layer variant mismatch: expected {expected}, found {found}")]
    VariantMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Failures raised while reading or writing a weight bundle.
#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a weight bundle (bad magic bytes)")]
    BadMagic,

    #[error("unsupported bundle format version {0}")]
    UnsupportedVersion(u32),

    #[error("bundle header is truncated")]
    TruncatedHeader,

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("payload checksum mismatch: manifest says {expected}, payload hashes to {found}")]
    ChecksumMismatch { expected: String, found: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}` in manifest")]
    UnexpectedTensor(String),

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{name}` has dtype {found}, bundle config declares {expected}")]
    DtypeMismatch {
        name: String,
        expected: String,
        found: String,
    },

    #[error("tensor `{name}` has byte length {found}, shape implies {expected}")]
    LengthMismatch {
        name: String,
        expected: u64,
        found: u64,
    },

    #[error("tensor `{0}` lies outside the payload")]
    OutOfBounds(String),

    #[error("tensors `{0}` and `{1}` overlap in the payload")]
    Overlap(String, String),

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),
}
