use thiserror::Error;

/// Errors shared across the estimator, the dynamic-programming solvers and
/// the decentralized protocol.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("information matrix is singular or rank-deficient")]
    SingularInformation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value iteration did not converge after {iters} sweeps (residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("no F/G crossing on the grid; increase the grid range")]
    NoThreshold,
    #[error("stopping set is not a prefix interval of the grid")]
    NonIntervalStopSet,
    #[error("failed to bracket the calibration target after {expansions} expansions")]
    BracketFailure { expansions: usize },
    #[error("degenerate correlation |rho| >= 1")]
    DegenerateCorrelation,
    #[error("correlation matrix is singular")]
    SingularR,
    #[error("equicorrelation parameter {0} outside the valid range")]
    InvalidCorrelation(f64),
    #[error("right-hand side of the threshold equation must be positive, got {0}")]
    NonpositiveTarget(f64),
    #[error("overshoot {overshoot} exceeds the assumed bound {bound} (sensor {sensor}, dim {dim})")]
    OvershootBoundViolated {
        sensor: usize,
        dim: usize,
        overshoot: f64,
        bound: f64,
    },
    #[error("horizon of {0} samples exceeded")]
    HorizonExceeded(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
