use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("class {class} has no examples")]
    EmptyClass { class: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("test set is empty")]
    EmptyTest,

    #[error("class {class} ({name}) has {available} examples in the pool, {required} required")]
    Pool {
        class: usize,
        name: String,
        available: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cell (method={method}, n_small={n_small}, seed={seed}) failed: {source}")]
    Cell {
        method: String,
        n_small: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable kind, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "IoError",
            Error::Format(_) => "FormatError",
            Error::Vocab(_) => "VocabError",
            Error::Data(_) => "DataError",
            Error::EmptyClass { .. } => "EmptyClassError",
            Error::Dim { .. } => "DimError",
            Error::DegenerateVariance(_) => "DegenerateVarianceError",
            Error::Divergence { .. } => "DivergenceError",
            Error::EmptyTest => "EmptyTestError",
            Error::Pool { .. } => "PoolError",
            Error::Config(_) => "ConfigError",
            Error::Cell { source, .. } => source.kind(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dim { expected, got })
    }
}
