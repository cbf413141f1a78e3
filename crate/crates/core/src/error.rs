use thiserror::Error;

/// Every failure mode surfaced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("cannot parse `{0}`")]
    Parse(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate window: weight sum vanishes for N = {0}")]
    DegenerateWindow(u64),
    #[error("precision exhausted: {0}")]
    PrecisionExhausted(String),
    #[error("quadrature budget exceeded: {0}")]
    QuadratureBudgetExceeded(String),
    #[error("multi-index support {index} exceeds dimension {dim}")]
    SupportMismatch { index: usize, dim: usize },
    #[error("no summable tail bound: {0}")]
    TailBoundUnavailable(String),
    #[error("error budget degenerate: {0}")]
    BudgetDegenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, NumericError>;
