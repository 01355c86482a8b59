use thiserror::Error;

/// Invalid model or scenario input; `field` names the offending parameter.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ModelError {
    pub field: String,
    pub message: String,
}

impl ModelError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-canonical ordering: {0}")]
    NonCanonical(String),
    #[error("index out of range: {index} >= {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("caging requires pi flux (gauge_phase = {0})")]
    NotCaged(f64),
    #[error("zero-velocity band {band} at K = {k}")]
    FlatBand { band: usize, k: f64 },
    #[error("off-resonant: no propagating mode in band {band} at E = {target} (band spans [{min}, {max}])")]
    OffResonant { band: usize, target: f64, min: f64, max: f64 },
    #[error("band {band} is degenerate at K = {k} (gap {gap:e})")]
    Degenerate { band: usize, k: f64, gap: f64 },
    #[error("band index {band} out of range (1..={count})")]
    BandOutOfRange { band: usize, count: usize },
    #[error("finite-difference velocity not converged at K = {k}: {v1} vs {v2}")]
    VelocityNotConverged { k: f64, v1: f64, v2: f64 },
    #[error("no exponential regime in series")]
    NoExponentialRegime,
    #[error("norm drift {drift:e} at t = {t}")]
    NormDrift { t: f64, drift: f64 },
    #[error("energy drift {drift:e} (bound {bound:e}) at t = {t}")]
    EnergyDrift { t: f64, drift: f64, bound: f64 },
    #[error("step-size underflow: {0}")]
    StepUnderflow(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Config or model errors are caller mistakes; everything else is numeric or I/O.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Model(_) | Error::Config(_) | Error::NonCanonical(_) | Error::NotCaged(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
