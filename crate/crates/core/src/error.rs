use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate geometry: receiver {rx} is {distance:e} from transmitter {tx}")]
    DegenerateGeometry { tx: usize, rx: usize, distance: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid channel instance: {0}")]
    InvalidInstance(String),

    #[error("power allocation outside [0, {pmax}] at index {index}: {value}")]
    Infeasible { index: usize, value: f64, pmax: f64 },

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("non-finite value during {stage} at iteration {iteration}, pair {pair}")]
    NonFinite {
        stage: &'static str,
        iteration: usize,
        pair: usize,
    },

    #[error("grid oracle refuses n = {0} (limit is 4)")]
    OracleTooLarge(usize),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("unsupported dataset version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}
