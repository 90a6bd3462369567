//! Simulation and evaluation primitives for power control in SISO
//! device-to-device interference networks.
//!
//! The crate is organized around three concerns:
//!
//! - [`netgen`]: random topologies, path-loss and Rayleigh fading, channel
//!   instances and persisted datasets.
//! - [`objective`]: per-pair rates, the weighted sum-rate, and graph
//!   homophily indices.
//! - [`baselines`]: max-power, scalar WMMSE, and an exhaustive grid oracle
//!   for tiny networks.
//!
//! Channel matrices use the convention `h[(i, j)]` = amplitude gain from
//! transmitter `j` to receiver `i`, so that the interference seen by
//! receiver `i` is `sum_{j != i} h[(i, j)]^2 * p[j]`.

pub mod baselines;
pub mod dataset;
mod error;
pub mod matrix;
pub mod netgen;
pub mod objective;

pub use baselines::{grid_oracle, max_power, wmmse, WmmseOptions, WmmseOutcome, WmmseState};
pub use dataset::{load_dataset, save_dataset, write_dataset_csv};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use netgen::{
    build_channel, gen_dataset, gen_fixed_topology, pathloss_matrix, sample_fading, sample_topology, topology_rng, ChannelInstance,
    ChannelParams, Dataset, DatasetSpec, ReceiverPlacement, Topology, TopologyParams,
};
pub use objective::{
    allocation_homophily, homophily_discrete, homophily_weighted, pair_rates, weighted_sum_rate, HomophilyReport,
    PowerAllocation,
};

/// Default receiver noise power used throughout the simulation protocol.
pub const DEFAULT_SIGMA2: f64 = 2.6e-5;

/// Path-loss exponent applied to transmitter/receiver distances.
pub const PATHLOSS_EXPONENT: f64 = 2.2;
