use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate Gaussian envelope (sum {0:e})")]
    DegenerateEnvelope(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("filterbank size mismatch: {left} vs {right} filters")]
    SizeMismatch { left: usize, right: usize },

    #[error("backward pass requested without a recorded tape")]
    TapeMissing,

    #[error("batch of {0} is too small for training-mode batch normalization")]
    DegenerateBatch(usize),

    #[error("requested {requested} samples but only {available} are available")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("deformation strength {strength} outside [{min}, {max}] for {kind}")]
    StrengthOutOfRange {
        kind: String,
        strength: f64,
        min: f64,
        max: f64,
    },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
