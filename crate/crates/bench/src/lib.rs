//! Experiment harness for the power-control study: dataset generation,
//! training, baseline comparisons, parameter sweeps and plots.
//!
//! Each experiment returns a [`Report`] holding its CSV tables, SVG plots
//! and a [`Manifest`] with the configuration, seeds and dataset hashes
//! needed to rerun it. Wall-clock measurements are kept out of the hashed
//! outputs.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;

pub use config::{BenchConfig, ExperimentSpec, Method, SweepVariable};
pub use experiments::{complexity_probe, rerun, run, EXPERIMENTS};
pub use report::{Manifest, Report, Table};
