use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible factor")]
    IncompatibleFactor,
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("level exceeds schedule range")]
    LevelExceedsSchedule,
    #[error("ODE step limit")]
    OdeStepLimit,
    #[error("ODE diverged")]
    OdeDiverged,
    #[error("score undefined at t=0")]
    ScoreUndefinedAtZero,
    #[error("degenerate {0} grid")]
    DegenerateGrid(&'static str),
    #[error("resolution mismatch: expected {expected}, got {got}")]
    ResolutionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidInput(String),
    #[error("training diverged at iteration {iteration}: loss is not finite")]
    TrainingDiverged { iteration: usize },
    #[error("unknown metric {0:?}; valid names: tvd, rmse, mmd, w2, melru, melrw")]
    UnknownMetric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
