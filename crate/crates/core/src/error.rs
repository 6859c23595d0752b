use crate::optimize::{SolveStatus, SolverError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown period {0}")]
    UnknownPeriod(i32),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{context}: solver returned {status:?}")]
    NotOptimal { context: String, status: SolveStatus },
    #[error("labeling aborted: {0}")]
    Label(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("format error in {what}: {message}")]
    Format { what: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("time budget of {budget_s} s exceeded after {elapsed_s:.1} s ({stage})")]
    Budget { stage: String, budget_s: f64, elapsed_s: f64 },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ (Error::Stage { .. } | Error::Budget { .. }) => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// The underlying error with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
