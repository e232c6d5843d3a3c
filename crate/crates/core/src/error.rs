use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Network(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    NoConvergence { sweeps: usize, off_diagonal: f64 },

    #[error("unknown line `{0}`")]
    UnknownLine(String),

    #[error("unknown train `{0}`")]
    UnknownTrain(String),

    #[error("train mismatch: `{0}` vs `{1}`")]
    TrainMismatch(String, String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("corrupt data: {0}")]
    Data(String),

    #[error("normalization statistics have not been fitted")]
    UnfittedStats,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("feature layout version mismatch: checkpoint has {found}, encoder expects {expected}")]
    LayoutVersion { expected: u32, found: u32 },

    #[error("infeasible timetable: {0}")]
    InfeasibleTimetable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
