use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller mistake detectable from shapes/configuration alone.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input tensor is too small along one axis for the requested op.
    #[error("input too small along axis {axis}: need at least {needed}, got {got}")]
    InputTooSmall { axis: char, needed: usize, got: usize },

    /// An API contract was violated (e.g. backward from a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Batch sampling is infeasible for the given dataset/config.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Malformed or inconsistent input data (labels, frames, manifests).
    #[error("data error: {0}")]
    Data(String),

    /// The model description cannot be assembled into a runnable network.
    #[error("model build error: {0}")]
    Build(String),

    /// A learnable parameter left its valid domain (e.g. GeM p <= 0).
    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    /// NaN/Inf encountered where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A serialized artifact (checkpoint, embedding file) is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
