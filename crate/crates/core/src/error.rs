use thiserror::Error;

#[derive(Debug, Error)]
pub enum PasError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate direction: norm {0:e} is too small to define a basis")]
    DegenerateDirection(f64),

    #[error("all input vectors are degenerate; basis would be empty")]
    EmptyBasis,

    #[error("variance is undefined for an all-zero matrix")]
    UndefinedVariance,

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("optimizer diverged at step {step}, iteration {iteration} (loss = {loss})")]
    Divergence {
        step: usize,
        iteration: usize,
        loss: f64,
    },

    #[error("incompatible correction table: {0}")]
    IncompatibleTable(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PasError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PasError::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PasError::Divergence { .. }
                | PasError::DegenerateDirection(_)
                | PasError::EmptyBasis
                | PasError::UndefinedVariance
        )
    }
}

pub type Result<T> = std::result::Result<T, PasError>;
