use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    #[error("system '{system}' requires parameter '{param}'")]
    MissingParameter { system: String, param: String },

    #[error("system '{0}' has no first integral")]
    NoFirstIntegral(String),

    #[error("system '{0}' provides no analytic Jacobian")]
    NoJacobian(String),

    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("no event: section was not crossed before t = {t_end}")]
    NoEvent { t_end: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss encountered during training")]
    NonFiniteLoss,

    #[error("Newton refinement did not converge: {0}")]
    NewtonFailure(String),

    #[error("linear system '{0}' is defective (not diagonalizable)")]
    Defective(String),

    #[error("model is missing its period network")]
    MissingPeriodNet,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
