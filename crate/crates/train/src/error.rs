use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid training configuration: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch} on instance {instance}")]
    NonFiniteLoss { epoch: usize, instance: usize },

    #[error(transparent)]
    Model(#[from] d2d_tgt::Error),

    #[error(transparent)]
    Tensor(#[from] d2d_autodiff::Error),

    #[error(transparent)]
    Channel(#[from] d2d_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
