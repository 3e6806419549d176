//! Error type shared across the crate.

use std::fmt;

/// Everything that can go wrong in this crate, from shape mismatches to
/// structurally infeasible solves.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix or vector had the wrong shape for the requested operation.
    DimensionMismatch { context: &'static str, expected: String, got: String },
    /// An input contained NaN or infinite entries.
    NonFinite { context: &'static str },
    /// A matrix that must be inverted is (numerically) singular.
    SingularMatrix { context: &'static str },
    /// Stiefel projection of a rank-deficient matrix is non-unique.
    DegenerateProjection,
    /// The requested operation is not defined for this RS model.
    UnsupportedKind { op: &'static str, kind: &'static str },
    /// The effective map cannot reach the full M·K-dimensional channel space.
    RankInfeasible { rank: usize, required: usize },
    /// An iterative routine hit a degenerate configuration it cannot step past.
    DegenerateIteration { context: &'static str },
    /// A run configuration is invalid (bad ranges, empty dimension sets, ...).
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { context, expected, got } => {
                write!(f, "{context}: expected {expected}, got {got}")
            }
            Error::NonFinite { context } => write!(f, "{context}: non-finite entries"),
            Error::SingularMatrix { context } => write!(f, "{context}: matrix is singular"),
            Error::DegenerateProjection => {
                write!(f, "stiefel projection of a rank-deficient matrix is non-unique")
            }
            Error::UnsupportedKind { op, kind } => {
                write!(f, "{op} is not defined for RS kind {kind}")
            }
            Error::RankInfeasible { rank, required } => {
                write!(f, "effective map has rank {rank} < {required}: channel not reachable")
            }
            Error::DegenerateIteration { context } => write!(f, "{context}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
