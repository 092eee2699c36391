//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violates its invariants (e.g. empty annulus,
    /// inconsistent antenna counts, non-positive power budget).
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Tensor/matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A permutation vector is not a bijection over the node set.
    #[error("permutation is not bijective over {0} nodes")]
    NonBijective(usize),

    /// A solver produced non-finite values; treated as a bug signal.
    #[error("solver diverged: {0}")]
    Diverged(String),

    /// Training aborted (non-finite loss or inconsistent dataset).
    #[error("training failed: {0}")]
    Training(String),

    /// On-disk artifact has the wrong magic bytes or is truncated/garbled.
    #[error("corrupt data: {0}")]
    CorruptData(String),

    /// On-disk artifact has an unsupported format version.
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
