use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("family mismatch: expected {expected}, found {found}")]
    FamilyMismatch { expected: String, found: String },

    /// The full model is indistinguishable from the null model, so relative
    /// explanatory power has no meaning.
    #[error(
        "relative explanatory power is undefined: null-model information loss {delta_0:e} \
         is below 1e-15 (the model's predictions do not vary over the locality)"
    )]
    UndefinedPower { delta_0: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("adapter protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
