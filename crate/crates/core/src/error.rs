use std::fmt;

use serde::{Deserialize, Serialize};

/// Why a replication produced no estimate for an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    RankDeficient,
    NotPositiveDefinite,
    IterationCap,
    Nonfinite,
    GibbsFailure,
}

impl FailureKind {
    pub const ALL: [FailureKind; 5] = [
        FailureKind::RankDeficient,
        FailureKind::NotPositiveDefinite,
        FailureKind::IterationCap,
        FailureKind::Nonfinite,
        FailureKind::GibbsFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::RankDeficient => "rank_deficient",
            FailureKind::NotPositiveDefinite => "not_positive_definite",
            FailureKind::IterationCap => "iteration_cap",
            FailureKind::Nonfinite => "nonfinite",
            FailureKind::GibbsFailure => "gibbs_failure",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("design matrix is rank deficient: rank {rank} < {columns} columns")]
    RankDeficient { rank: usize, columns: usize },

    #[error("{kind} after {iterations} iterations (last objective {objective})")]
    ConvergenceFailure {
        kind: FailureKind,
        iterations: usize,
        objective: f64,
    },

    #[error("singular regression: {0}")]
    Singular(String),

    #[error("pooled variance is zero")]
    DegenerateVariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Maps a pipeline error onto the replication failure taxonomy.
    /// Returns `None` for errors that are not model failures (I/O, bad input).
    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self {
            Error::NotPositiveDefinite { .. } => Some(FailureKind::NotPositiveDefinite),
            Error::RankDeficient { .. } => Some(FailureKind::RankDeficient),
            Error::ConvergenceFailure { kind, .. } => Some(*kind),
            Error::Singular(_) | Error::DegenerateVariance => Some(FailureKind::Nonfinite),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
