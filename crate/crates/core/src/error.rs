use std::path::PathBuf;

/// Errors produced by the codec, link, training and evaluation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shape, range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("knowledge base file has bad magic")]
    BadMagic,

    #[error("unsupported knowledge base format version {0:?}")]
    UnsupportedVersion(u8),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    /// The stored digest does not match the payload it covers.
    #[error("content hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },

    /// Sender and receiver hold different semantic codebooks.
    #[error("knowledge base desynchronized: checkpoint was trained with {expected}, knowledge base is {actual}")]
    KbDesync { expected: String, actual: String },

    #[error("dataset not found at {}", path.display())]
    DatasetMissing { path: PathBuf },

    #[error("dataset file {}: {reason}", path.display())]
    DatasetCorrupt { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Diverged {
        epoch: usize,
        step: usize,
        what: &'static str,
    },

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
