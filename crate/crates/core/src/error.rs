use thiserror::Error;

use crate::model::ValidationReport;

/// Which of the two models an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The reference model (the first argument, `θ1`).
    First,
    /// The compared model (the second argument, `θ0`).
    Second,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::First => write!(f, "model a"),
            Side::Second => write!(f, "model b"),
        }
    }
}

#[derive(Debug, Error)]
pub enum KldError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid model: {0}")]
    Invalid(ValidationReport),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("emission kind mismatch: {0}")]
    KindMismatch(String),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("model is not homogeneous with a regular topology")]
    NotHomogeneous,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no unique stationary distribution: {0}")]
    NoUniqueStationary(String),

    #[error("evidence has zero likelihood{} (mass vanishes at position {position})", side_suffix(.side))]
    ZeroLikelihood { side: Option<Side>, position: usize },

    #[error("non-finite intermediate value: {0}")]
    NonFinite(String),

    #[error("enumeration budget exceeded: {outcomes} outcomes > budget {budget}")]
    BudgetExceeded { outcomes: u128, budget: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

fn side_suffix(side: &Option<Side>) -> String {
    side.map(|s| format!(" under {s}")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, KldError>;
