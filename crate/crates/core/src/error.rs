//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No admissible partition scale r with 1/r integer exists below the
    /// granularity floor; carries the violated constraint.
    #[error("no partition scale: {0}")]
    NoPartitionScale(String),

    /// A Maxwellian with T = 0 was used where a positive temperature is
    /// required; the caller must branch to the Dirac rule instead.
    #[error("degenerate Maxwellian (T = 0); caller must handle the Dirac case")]
    DegenerateMaxwellian,

    /// Grid density fell below the division floor, which the a-priori lower
    /// bounds rule out for well-posed runs.
    #[error("degenerate density {value:.3e} at spatial node {node:?}")]
    DegenerateDensity { node: Vec<usize>, value: f64 },

    #[error("solver instability: {0}")]
    Instability(String),

    #[error("moment matching did not converge: {0}")]
    NotConverged(String),

    #[error("requested time {t} outside stored field range [{t0}, {t1}]")]
    FieldTimeOutOfRange { t: f64, t0: f64, t1: f64 },

    #[error("point cloud too large for exact assignment: n = {n} > {max}; subsample the clouds first")]
    CloudTooLarge { n: usize, max: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
