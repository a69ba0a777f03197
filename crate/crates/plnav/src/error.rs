//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geodetic coordinate: {0}")]
    InvalidGeodetic(String),

    #[error("ECEF point too close to Earth center (norm {norm:.3e} m) for geodetic conversion")]
    DegenerateEcef { norm: f64 },

    #[error("position radius {radius:.3e} m outside gravity model envelope [6.2e6, 7.0e6]")]
    GravityEnvelope { radius: f64 },

    #[error("transmitter and receiver positions coincide")]
    CoincidentPositions,

    #[error("observation mismatch: {0}")]
    ObservationMismatch(String),

    #[error("underdetermined solve: {have} observations, need at least {need}")]
    Underdetermined { have: usize, need: usize },

    #[error("degenerate observation geometry: {0}")]
    SingularGeometry(String),

    #[error("non-positive integration step dt = {0}")]
    NonPositiveDt(f64),

    #[error("IMU gap of {gap:.4} s inside span ({start:.4}, {end:.4}] exceeds 2x nominal interval")]
    ImuGap { start: f64, end: f64, gap: f64 },

    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("epoch {epoch} outside ground-truth span [{start}, {end}]")]
    EpochOutOfSpan { epoch: f64, start: f64, end: f64 },

    #[error("epoch misalignment: {0}")]
    EpochMisalignment(String),

    #[error("invalid config field `{field}`: {constraint}")]
    InvalidConfig { field: String, constraint: String },

    #[error("non-finite residual encountered: {0}")]
    NonFiniteResidual(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
