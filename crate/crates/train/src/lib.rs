//! Unsupervised training and evaluation for the graph transformer
//! power-control model.
//!
//! The loss is the negative mean weighted sum-rate of a batch, computed on
//! the true channel gains while the model sees max-normalized ones.
//! Batches hold graphs of one size; datasets mixing sizes are bucketed.

mod error;
mod eval;
mod loss;
mod train;

pub use error::{Error, Result};
pub use eval::{evaluate, mean_std, write_per_instance_csv, EvalSummary, MaxPower, PowerPolicy, Wmmse};
pub use loss::sum_rate_loss;
pub use train::{
    model_card, train, train_from, train_step, write_history_csv, EpochRecord, TrainConfig, TrainOutcome,
};
