use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use d2d_core::ChannelParams;
use d2d_tgt::TgtConfig;
use d2d_train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MaxPower,
    Wmmse,
    Tgt,
    TgtMultinode,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Self::MaxPower => "max_power",
            Self::Wmmse => "wmmse",
            Self::Tgt => "tgt",
            Self::TgtMultinode => "tgt_multinode",
        }
    }
}

/// Quantity varied across the columns of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    None,
    NetworkSize,
    FadingScale,
    FieldHalfWidth,
    ModelWidth,
    NoisePower,
}

/// What one experiment run evaluates. Recorded in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub methods: Vec<Method>,
    pub sweep: SweepVariable,
    pub sweep_values: Vec<f64>,
    pub eval_topologies: usize,
    pub eval_fades_per_topology: usize,
    pub seeds: BTreeMap<String, u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(name: &str, config: &BenchConfig) -> Self {
        Self {
            name: name.to_string(),
            methods: Vec::new(),
            sweep: SweepVariable::None,
            sweep_values: Vec::new(),
            eval_topologies: config.eval.topologies,
            eval_fades_per_topology: config.eval.fades_per_topology,
            seeds: BTreeMap::from([("base".to_string(), config.seed)]),
            out: None,
        }
    }

    pub fn sweep(mut self, variable: SweepVariable, values: impl IntoIterator<Item = f64>) -> Self {
        self.sweep = variable;
        self.sweep_values = values.into_iter().collect();
        self
    }

    pub fn methods(mut self, methods: &[Method]) -> Self {
        self.methods = methods.to_vec();
        self
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.sweep != SweepVariable::None && self.sweep_values.is_empty() {
            anyhow::bail!("experiment `{}` declares a sweep without values", self.name);
        }
        Ok(())
    }
}

/// Training-set protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_list: Vec<usize>,
    pub topologies: usize,
    pub fades_per_topology: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_list: vec![50],
            topologies: 500,
            fades_per_topology: 50,
        }
    }
}

/// Evaluation-set protocol shared by every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub topologies: usize,
    pub fades_per_topology: usize,
    pub batch_size: usize,
    pub wmmse_iterations: usize,
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            topologies: 50,
            fades_per_topology: 50,
            batch_size: 64,
            wmmse_iterations: 100,
            methods: vec![Method::MaxPower, Method::Wmmse, Method::Tgt, Method::TgtMultinode],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub size_sweep: Vec<usize>,
    pub size_sweep_topologies: usize,
    pub size_sweep_fades: usize,
    pub sweep_n: usize,
    pub fading_scales: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub sigma2_grid: Vec<f64>,
    pub homophily_n: usize,
    pub homophily_instances: usize,
    pub histogram_n: usize,
    pub histogram_fades: usize,
    pub histogram_bins: usize,
    pub widths: Vec<usize>,
    pub scaling_n: usize,
    pub complexity_sizes: Vec<usize>,
    pub complexity_repeats: usize,
    /// Checkpoint roles drawn as curves in the size-generalization sweep.
    pub generalization_models: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![20, 30, 40, 50],
            size_sweep: (2..=10).map(|k| 10 * k).collect(),
            size_sweep_topologies: 100,
            size_sweep_fades: 10,
            sweep_n: 50,
            fading_scales: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            half_widths: vec![200.0, 150.0, 100.0, 50.0, 25.0, 50.0 / 3.0, 12.5],
            sigma2_grid: (0..7).map(|k| 10f64.powi(k - 6)).collect(),
            homophily_n: 50,
            homophily_instances: 100,
            histogram_n: 50,
            histogram_fades: 32_000,
            histogram_bins: 40,
            widths: vec![4, 8, 16, 32, 64, 104],
            scaling_n: 30,
            complexity_sizes: vec![64, 128],
            complexity_repeats: 5,
            generalization_models: vec!["n30".into(), "n50".into(), "multinode".into()],
        }
    }
}

/// Full experiment configuration, loadable from TOML. Every field has a
/// default that follows the full experimental protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub channel: ChannelParams,
    pub model: TgtConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub sweeps: SweepConfig,
    /// Checkpoint files by role: `n20` ... `n50`, `multinode`, `d4` ...
    pub models: BTreeMap<String, PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            channel: ChannelParams::default(),
            model: TgtConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            sweeps: SweepConfig::default(),
            models: BTreeMap::new(),
        }
    }
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Seed for the named purpose, derived from the base seed.
    pub fn derive_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }
}

pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
