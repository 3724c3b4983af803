use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// `mode` is 0-based; the message shows it 1-based.
    #[error("index {index} out of bounds for mode {} (size {size})", mode + 1)]
    IndexOutOfBounds { mode: usize, index: u64, size: u32 },

    #[error("multi-index has {got} components, tensor order is {expected}")]
    OrderMismatch { expected: usize, got: usize },

    #[error("invalid dimension tree: {0}")]
    InvalidTree(String),

    #[error("nesting restriction eliminated all fibers at node {node}")]
    NoAdmissibleFibers { node: usize },

    #[error("matricization is empty (rank 0)")]
    EmptyMatricization,

    #[error("linear index over modes {modes:?} does not fit in 128 bits")]
    IndexOverflow { modes: Vec<usize> },

    #[error("requested {cells} cells exceeds the cap of {cap}; use a block query instead")]
    SizeCap { cells: f64, cap: u64 },

    #[error("record {record} expands to {count} combinations (cap {cap})")]
    CombinationCap {
        record: String,
        count: u128,
        cap: u64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported model format version {0}")]
    Version(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input (bad flags, files, indices)
    /// rather than by the computation itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NoAdmissibleFibers { .. } | Error::EmptyMatricization
        )
    }
}
