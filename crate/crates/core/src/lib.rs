//! Wireless networks as feature-rich directed graphs, with two solvers for
//! the weighted sum-rate maximization problem in a K-pair interference
//! channel:
//!
//! * the classic WMMSE block-coordinate optimizer ([`wmmse`]), and
//! * a wireless channel graph convolution network ([`wcgcn`]) trained
//!   unsupervised on the negative sum rate, built on a small reverse-mode
//!   autodiff engine ([`nngrad`]).
//!
//! The [`mbdla`] module runs synchronous multiset-broadcasting local
//! algorithms on the same graphs and expresses WMMSE as one, so the
//! solver/message-passing equivalence can be checked numerically. [`harness`]
//! drives end-to-end experiments (datasets, training, baseline comparisons,
//! generalization sweeps, timing benchmarks) from JSON configs.

pub mod error;
pub mod graph;
pub mod harness;
pub mod mbdla;
pub mod nngrad;
pub mod scenario;
pub mod wcgcn;
pub mod wmmse;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
