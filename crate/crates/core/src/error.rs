use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("grid of {requested} points exceeds the cap of {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("verification failed in trial {trial}: {detail}")]
    Verification { trial: usize, detail: String },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
