//! Truncated Graph Transformer (TGT) for power allocation in SISO
//! interference networks.
//!
//! A channel instance becomes a complete graph with self loops. Node `i`
//! carries `[h'_ii, w_i]`, edge `(i, j)` carries `[h'_ij, h'_ji]`, where
//! `h'` is the amplitude matrix divided by its largest entry. Both are
//! embedded to width `d` by an affine map and batch normalization. Each of
//! the `L` layers then runs per-head attention with edge-aware keys,
//!
//! ```text
//! s_ij = LeakyReLU(q_i . (K x_j + e_ij) / sqrt(d)),   a_ij = softmax_j(s_ij)
//! x_i <- LayerNorm(x_i + concat_heads(sum_j a_ij V x_j))
//! ```
//!
//! with one set of per-head `Q`, `K`, `V` matrices shared by every layer.
//! The output head is `p_i = pmax * sigmoid(sum_f x_i[f])`.

mod config;
mod encode;
mod error;
mod model;

pub use config::{num_params, AttentionScale, FeatureTransform, TgtConfig};
pub use encode::{encode_graph, GraphEncoding};
pub use error::{Error, Result};
pub use model::{attention_maps, forward, forward_batch, forward_on_tape, BatchStats, ForwardPass, TgtParams};
