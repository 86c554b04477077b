use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cannot estimate scene scale: {0}")]
    ScaleEstimation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("track {id} has category {category}, only cars can be studied")]
    NotACar { id: u32, category: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("feature vector has length {got}, model expects {expected}")]
    Shape { expected: usize, got: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("label sets are misaligned: {0}")]
    Alignment(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}
