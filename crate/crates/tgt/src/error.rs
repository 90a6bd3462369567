use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("channel matrix is all zero")]
    ZeroChannel,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("batch mixes network sizes {0} and {1}")]
    MixedSizes(usize, usize),

    #[error("parameters do not match the configuration: {0}")]
    ParamMismatch(String),

    #[error("non-finite attention logits in layer {layer}")]
    NonFiniteLogits { layer: usize },

    #[error(transparent)]
    Tensor(#[from] d2d_autodiff::Error),

    #[error(transparent)]
    Channel(#[from] d2d_core::Error),
}
