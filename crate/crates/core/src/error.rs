use thiserror::Error;

use crate::solvers::SolverReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad sizes, negative rates, CFL violations, unreadable inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse: double waits, length mismatches, killing a dead rank.
    #[error("usage error: {0}")]
    Usage(String),

    /// A participating rank is dead. Delivered to survivors instead of hanging.
    #[error("rank failure: rank(s) {ranks:?} failed")]
    RankFailure { ranks: Vec<usize> },

    /// Local recovery is impossible: lost replicas, missing halo history, no callback.
    #[error("unrecoverable failure: {0}")]
    Unrecoverable(String),

    #[error("persistent corruption: {rejections} consecutive Krylov cycles rejected")]
    PersistentCorruption {
        rejections: usize,
        report: Box<SolverReport>,
    },

    #[error("solver diverged: non-finite residual at iteration {iteration}")]
    Diverged {
        iteration: usize,
        report: Box<SolverReport>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn rank_failure(mut ranks: Vec<usize>) -> Self {
        ranks.sort_unstable();
        ranks.dedup();
        Error::RankFailure { ranks }
    }
}
