use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: left has dimension {left}, right has dimension {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("top-K capacity {k} exceeds the number of creators {n}")]
    CapacityExceedsCreators { k: usize, n: usize },

    #[error("non-finite score encountered at index {index}: {value}")]
    NonFiniteScore { index: usize, value: f64 },

    #[error("non-finite group utility for group {group}: {value}")]
    NonFiniteGroupUtility { group: usize, value: f64 },

    #[error("empty catalog strategy set")]
    EmptyCatalog,

    #[error("catalog index {index} out of bounds for item table of size {table_size}")]
    CatalogIndexOutOfBounds { index: usize, table_size: usize },

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("requested {l} clusters for a population of {m} users")]
    TooManyClusters { l: usize, m: usize },

    #[error("config validation failed:\n{}", .0.join("\n"))]
    ConfigValidation(Vec<String>),

    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
