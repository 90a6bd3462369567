//! A small dense-tensor core with tape-based reverse-mode differentiation.
//!
//! Everything is `f64` and row-major. A [`Tape`] records each forward
//! operation as a node; [`Tape::backward`] walks the nodes once in reverse
//! and accumulates vector-Jacobian products into [`Gradients`].
//!
//! ```
//! use d2d_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::scalar(0.0));
//! let x = tape.constant(Tensor::scalar(1.0));
//! let wx = tape.mul(w, x).unwrap();
//! let y = tape.sigmoid(wx);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert!((grads.get(w).unwrap()[0] - 0.25).abs() < 1e-15);
//! ```
//!
//! Besides the usual elementwise, reduction and normalization primitives,
//! the tape has three fused kernels for per-head graph attention
//! ([`Tape::head_linear`], [`Tape::edge_scores`], [`Tape::attend`]) so
//! the `n x n x d` edge tensors are touched once per layer.

mod checkpoint;
mod error;
mod gradcheck;
mod norm;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport, TensorCheck};
pub use norm::{BatchNorm, NormMode};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{AttnDims, Gradients, Tape, Var};
pub use tensor::Tensor;
