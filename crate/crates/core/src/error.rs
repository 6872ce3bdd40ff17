use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("beat list is empty")]
    Empty,

    #[error("timestamps not strictly increasing at beat {index} ({prev} ms then {value} ms)")]
    NonMonotonic { index: usize, prev: i64, value: i64 },

    #[error("need at least {needed} items, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("interval of {interval_ms} ms ending at beat {index} is outside [{min_ms}, {max_ms}] ms")]
    PhysiologicallyInvalid {
        index: usize,
        interval_ms: i64,
        min_ms: i64,
        max_ms: i64,
    },

    #[error("window length must be positive, got {0} ms")]
    InvalidWindowLength(i64),

    #[error("series do not overlap for any candidate alignment")]
    NoOverlap,

    #[error("degenerate search grid: {0}")]
    DegenerateSearch(String),

    #[error("no beats to summarize")]
    EmptySeries,

    #[error("no interval pairs available")]
    EmptyPairSet,

    #[error("calibration needs runs of both rhythms, only {0} present")]
    SingleClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}:{line}: {message}", path.display())]
    Consistency {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A series-level validation failure traced back to a row of its file.
    #[error("{}:{line}: {source}", path.display())]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
