use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op} over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("backward called on {0}, which is not a recorded scalar")]
    NotAScalar(String),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("non-finite gradient reached leaf #{node}")]
    NonFiniteGradient { node: usize },

    #[error("closure is not deterministic: losses {first} and {second} differ")]
    Nondeterministic { first: f64, second: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
