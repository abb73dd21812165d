use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SlamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SlamError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("missing IMU data: largest coverage gap {gap:.4} s exceeds {limit:.4} s")]
    MissingImu { gap: f64, limit: f64 },

    #[error("combined covariance is not invertible")]
    SingularCovariance,

    #[error("no usable correspondences")]
    NoCorrespondences,

    #[error("grid has no usable cells")]
    NoUsableCells,

    #[error("descriptor dimensions differ: {0:?} vs {1:?}")]
    DescriptorMismatch((usize, usize), (usize, usize)),

    #[error("pose graph is disconnected; orphaned nodes: {0:?}")]
    Disconnected(Vec<usize>),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("linear system is not positive definite")]
    NotPositiveDefinite,

    #[error("timestamp {got} is not after the last processed timestamp {last}")]
    NonMonotoneTimestamp { last: f64, got: f64 },

    #[error("no scans")]
    NoScans,

    #[error("trajectory too short: {0:.2} m")]
    TrajectoryTooShort(f64),

    #[error("trajectories do not overlap in time")]
    NoOverlap,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
