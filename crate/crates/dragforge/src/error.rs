use thiserror::Error;

/// Errors raised by pulse construction, model building, and propagation.
#[derive(Debug, Clone, Error)]
pub enum DragError {
    #[error("invalid envelope spec: {0}")]
    InvalidSpec(String),
    #[error("derivative order {requested} exceeds supported order {supported}")]
    UnsupportedOrder { requested: usize, supported: usize },
    #[error("area normalization failed to converge: {0}")]
    NormalizationFailure(String),
    #[error("singular coefficient system: {0}")]
    SingularSystem(String),
    #[error("envelope flatness m={have} insufficient, need m >= {need}")]
    InsufficientFlatness { have: usize, need: usize },
    #[error("degenerate energy gap at t={t}: {what}")]
    DegenerateGap { t: f64, what: String },
    #[error("invalid regime at t={t}: {what}")]
    InvalidRegime { t: f64, what: String },
    #[error("system size error: {0}")]
    SizeError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("integrator failed to converge: {0}")]
    IntegratorFailure(String),
    #[error("sample grid mismatch: {0}")]
    GridMismatch(String),
    #[error("fixed-point iteration diverged: final residual {residual}")]
    Divergence { residual: f64 },
    #[error("config error: {0}")]
    ConfigError(String),
}
