use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("every entry of the softmax row is masked")]
    FullyMasked,

    #[error("channel count {0} must be divisible by 4")]
    ChannelsNotDivisibleBy4(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("infeasible synthesis parameters: {0}")]
    Infeasible(String),

    #[error("missing output for enabled loss term `{0}`")]
    MissingOutput(&'static str),

    #[error("weights: {0}")]
    Weights(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
