use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("observable support of {0} sites exceeds the 20-site limit")]
    ObservableTooLarge(usize),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all particle weights vanished during the Bayes update")]
    AllWeightsZero,
    #[error("posterior covariance has non-finite entries")]
    DegenerateCovariance,
    #[error("local cloud weights are not uniform (max deviation {0:e})")]
    NonUniformLocal(f64),
    #[error("prior cloud cannot supply two distinct hypotheses")]
    DegeneratePrior,
    #[error("{qubits} qubits exceeds the dense simulation cap of {cap}")]
    CapExceeded { qubits: usize, cap: usize },
    #[error("learning failed for control run {run}: {source}")]
    LearningFailed { run: usize, source: Box<Error> },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
