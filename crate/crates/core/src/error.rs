use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine. `Config` errors are detected before any trial
/// is played; everything else surfaces at runtime.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no legal actions")]
    NoLegalActions,

    #[error("non-finite q-value {value} for action index {index}")]
    NonFiniteQ { index: usize, value: f64 },

    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),

    #[error("impossible observation: every type assigns zero likelihood")]
    ImpossibleObservation,

    #[error("likelihood vector has {got} entries, belief support has {expected}")]
    SupportMismatch { expected: usize, got: usize },

    #[error("flag vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("sample size too small: {0}")]
    SampleSizeTooSmall(usize),

    #[error("empty reward set while rewards are visible")]
    EmptyRewardSet,

    #[error("horizon exhausted at trial {trial} (horizon {horizon})")]
    HorizonExhausted { trial: usize, horizon: usize },

    #[error("planner budget must be at least one iteration")]
    ZeroBudget,

    #[error("invalid action byte 0x{0:02x}")]
    InvalidActionByte(u8),

    #[error("offer index {0} out of range 0..=10")]
    InvalidOffer(u8),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("no traces to summarise")]
    EmptyInput,
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that stem from an inconsistent configuration (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::BadTemperature(_)
                | Error::Json { .. }
                | Error::ZeroBudget
                | Error::SampleSizeTooSmall(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
