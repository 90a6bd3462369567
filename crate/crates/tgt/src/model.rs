use d2d_autodiff::{AttnDims, BatchNorm, Checkpoint, NamedTensor, NormMode, Tape, Tensor, Var};
use d2d_core::{ChannelInstance, PowerAllocation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TgtConfig;
use crate::encode::{encode_graph, GraphEncoding};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;
const RUNNING_STATS: [&str; 4] = [
    "node_bn.running_mean",
    "node_bn.running_var",
    "edge_bn.running_mean",
    "edge_bn.running_var",
];

/// Trainable tensors in a fixed order plus the batch-norm running
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TgtParams {
    config: TgtConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub node_bn: BatchNorm,
    pub edge_bn: BatchNorm,
}

fn layout(config: &TgtConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d;
    let (h, dh) = (config.heads, config.head_dim());
    let mut out = Vec::new();
    for side in ["node", "edge"] {
        out.push((format!("{side}_embed.weight"), vec![2, d]));
        out.push((format!("{side}_embed.bias"), vec![d]));
        out.push((format!("{side}_bn.gain"), vec![d]));
        out.push((format!("{side}_bn.bias"), vec![d]));
    }
    for s in 0..config.qkv_sets() {
        let prefix = if config.share_qkv { "attn".to_string() } else { format!("attn{s}") };
        for m in ["query", "key", "value"] {
            out.push((format!("{prefix}.{m}"), vec![h, dh, dh]));
        }
    }
    for l in 0..config.layers {
        out.push((format!("layer{l}.norm.gain"), vec![d]));
        out.push((format!("layer{l}.norm.bias"), vec![d]));
    }
    out
}

mod slot {
    pub const NODE: usize = 0;
    pub const EDGE: usize = 4;
    pub const QKV: usize = 8;
}

impl TgtParams {
    /// Affine weights and biases `~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// normalization gains 1 and biases 0.
    pub fn init(config: &TgtConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in layout(config) {
            let tensor = if name.ends_with("_bn.gain") || name.ends_with("norm.gain") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with("_bn.bias") || name.ends_with("norm.bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in = if name.contains("_embed") { 2 } else { config.head_dim() };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let numel = shape.iter().product();
                Tensor::new(shape, (0..numel).map(|_| rng.gen_range(-bound..bound)).collect())?
            };
            names.push(name);
            tensors.push(tensor);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
            node_bn: BatchNorm::new(config.d),
            edge_bn: BatchNorm::new(config.d),
        })
    }

    pub fn config(&self) -> &TgtConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|k| &self.tensors[k])
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Puts every tensor on `tape`, as gradient-receiving leaves when
    /// `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn apply_running_stats(&mut self, stats: &BatchStats) {
        blend(&mut self.node_bn, &stats.node_mean, &stats.node_var);
        blend(&mut self.edge_bn, &stats.edge_mean, &stats.edge_var);
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u64) -> Checkpoint {
        let mut tensors: Vec<NamedTensor> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, tensor)| NamedTensor { name: name.clone(), tensor: tensor.clone() })
            .collect();
        let stats = [
            &self.node_bn.running_mean,
            &self.node_bn.running_var,
            &self.edge_bn.running_mean,
            &self.edge_bn.running_var,
        ];
        for (name, values) in RUNNING_STATS.iter().zip(stats) {
            tensors.push(NamedTensor {
                name: (*name).to_string(),
                tensor: Tensor::vector(values.clone()),
            });
        }
        Checkpoint {
            config_hash: self.config.hash(),
            seed,
            epoch,
            tensors,
        }
    }

    pub fn from_checkpoint(config: &TgtConfig, checkpoint: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if checkpoint.config_hash != config.hash() {
            return Err(Error::ParamMismatch(format!(
                "checkpoint was written for config {}, expected {}",
                checkpoint.config_hash,
                config.hash()
            )));
        }
        let mut params = Self::init(config, 0)?;
        for (name, tensor) in params.names.iter().zip(params.tensors.iter_mut()) {
            let stored = checkpoint
                .get(name)
                .ok_or_else(|| Error::ParamMismatch(format!("missing tensor {name}")))?;
            if stored.shape() != tensor.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    tensor.shape()
                )));
            }
            *tensor = stored.clone();
        }
        let mut stats = Vec::with_capacity(4);
        for name in RUNNING_STATS {
            let t = checkpoint
                .get(name)
                .ok_or_else(|| Error::ParamMismatch(format!("missing tensor {name}")))?;
            if t.numel() != config.d {
                return Err(Error::ParamMismatch(format!("{name} has {} entries", t.numel())));
            }
            stats.push(t.data().to_vec());
        }
        params.edge_bn.running_var = stats.pop().unwrap_or_default();
        params.edge_bn.running_mean = stats.pop().unwrap_or_default();
        params.node_bn.running_var = stats.pop().unwrap_or_default();
        params.node_bn.running_mean = stats.pop().unwrap_or_default();
        let expected = params.names.len() + RUNNING_STATS.len();
        if checkpoint.tensors.len() != expected {
            return Err(Error::ParamMismatch(format!(
                "checkpoint holds {} tensors, expected {expected}",
                checkpoint.tensors.len()
            )));
        }
        Ok(params)
    }
}

fn blend(bn: &mut BatchNorm, mean: &[f64], var: &[f64]) {
    let m = bn.momentum;
    for (r, b) in bn.running_mean.iter_mut().zip(mean) {
        *r = (1.0 - m) * *r + m * b;
    }
    for (r, b) in bn.running_var.iter_mut().zip(var) {
        *r = (1.0 - m) * *r + m * b;
    }
}

/// Batch statistics from a training-mode pass, for the running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub node_mean: Vec<f64>,
    pub node_var: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_var: Vec<f64>,
}

/// Handles produced by [`forward_on_tape`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Powers, `[batch, n]`.
    pub power: Var,
    /// Attention maps per layer, `[batch, n, n, heads]`, normalized over
    /// the third axis.
    pub attention: Vec<Var>,
    /// Node features after the last layer, `[batch * n, d]`.
    pub features: Var,
    pub stats: Option<BatchStats>,
}

fn stack_inputs(batch: &[&GraphEncoding]) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let n = first.n;
    let mut nodes = Vec::with_capacity(batch.len() * n * 2);
    let mut edges = Vec::with_capacity(batch.len() * n * n * 2);
    for enc in batch {
        if enc.n != n {
            return Err(Error::MixedSizes(n, enc.n));
        }
        nodes.extend_from_slice(&enc.node_feats);
        edges.extend_from_slice(&enc.edge_feats);
    }
    Ok((n, nodes, edges))
}

/// Records the model on `tape` for a batch of equally sized graphs. `vars`
/// comes from [`TgtParams::register`]. In [`NormMode::Train`] the
/// embeddings are normalized with batch statistics, which are returned in
/// [`ForwardPass::stats`] but not applied.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &TgtParams,
    vars: &[Var],
    batch: &[&GraphEncoding],
    mode: NormMode,
) -> Result<ForwardPass> {
    let config = &params.config;
    if vars.len() != params.tensors.len() {
        return Err(Error::ParamMismatch(format!(
            "{} variables for {} tensors",
            vars.len(),
            params.tensors.len()
        )));
    }
    let (n, nodes, edges) = stack_inputs(batch)?;
    let b = batch.len();
    let d = config.d;
    let dims = AttnDims {
        batch: b,
        nodes: n,
        heads: config.heads,
        head_dim: config.head_dim(),
    };

    let node_in = tape.constant(Tensor::new(vec![b * n, 2], nodes)?);
    let edge_in = tape.constant(Tensor::new(vec![b * n * n, 2], edges)?);
    let (x, node_stats) = embed(tape, node_in, &vars[slot::NODE..slot::NODE + 4], &params.node_bn, mode)?;
    let (e, edge_stats) = embed(tape, edge_in, &vars[slot::EDGE..slot::EDGE + 4], &params.edge_bn, mode)?;

    let norm_base = slot::QKV + 3 * config.qkv_sets();
    let scale = config.logit_scale();
    let mut x = x;
    let mut attention = Vec::with_capacity(config.layers);
    for layer in 0..config.layers {
        let set = if config.share_qkv { 0 } else { layer };
        let qkv = &vars[slot::QKV + 3 * set..slot::QKV + 3 * set + 3];
        let q = tape.head_linear(x, qkv[0])?;
        let k = tape.head_linear(x, qkv[1])?;
        let v = tape.head_linear(x, qkv[2])?;
        let logits = tape.edge_scores(q, k, e, dims, scale)?;
        if tape.value(logits).data().iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteLogits { layer });
        }
        let logits = tape.leaky_relu(logits, config.leaky_slope);
        let att = tape.softmax(logits, 2)?;
        attention.push(att);
        let mixed = tape.attend(att, v, dims)?;
        let residual = tape.add(mixed, x)?;
        x = tape.layer_norm(residual, vars[norm_base + 2 * layer], vars[norm_base + 2 * layer + 1], NORM_EPS)?;
    }
    debug_assert_eq!(tape.value(x).shape(), &[b * n, d]);

    let logit = tape.sum_axis(x, 1)?;
    let unit = tape.sigmoid(logit);
    let power = tape.scale(unit, config.pmax);
    let power = tape.reshape(power, &[b, n])?;
    let stats = match (node_stats, edge_stats) {
        (Some((node_mean, node_var)), Some((edge_mean, edge_var))) => Some(BatchStats {
            node_mean,
            node_var,
            edge_mean,
            edge_var,
        }),
        _ => None,
    };
    Ok(ForwardPass {
        power,
        attention,
        features: x,
        stats,
    })
}

type Stats = Option<(Vec<f64>, Vec<f64>)>;

fn embed(tape: &mut Tape, input: Var, vars: &[Var], bn: &BatchNorm, mode: NormMode) -> Result<(Var, Stats)> {
    let h = tape.matmul(input, vars[0])?;
    let h = tape.add_row(h, vars[1])?;
    Ok(match mode {
        NormMode::Train => {
            let (y, mean, var) = tape.column_norm(h, vars[2], vars[3], bn.eps, None)?;
            (y, Some((mean, var)))
        }
        NormMode::Eval => {
            let stats = (bn.running_mean.as_slice(), bn.running_var.as_slice());
            (tape.column_norm(h, vars[2], vars[3], bn.eps, Some(stats))?.0, None)
        }
    })
}

/// Inference-mode powers for a batch of equally sized instances.
pub fn forward_batch(params: &TgtParams, instances: &[&ChannelInstance]) -> Result<Vec<Vec<f64>>> {
    let encodings = instances
        .iter()
        .map(|inst| encode_graph(inst, params.config.features))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&GraphEncoding> = encodings.iter().collect();
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let pass = forward_on_tape(&mut tape, params, &vars, &refs, NormMode::Eval)?;
    let n = refs[0].n;
    Ok(tape.value(pass.power).data().chunks(n.max(1)).map(<[f64]>::to_vec).collect())
}

/// Inference-mode power allocation for one instance.
pub fn forward(instance: &ChannelInstance, params: &TgtParams) -> Result<PowerAllocation> {
    let p = forward_batch(params, &[instance])?.pop().unwrap_or_default();
    Ok(PowerAllocation::new(p, params.config.pmax)?)
}

/// Inference-mode attention maps of one instance, one `[n, n, heads]`
/// buffer per layer.
pub fn attention_maps(instance: &ChannelInstance, params: &TgtParams) -> Result<Vec<Vec<f64>>> {
    let enc = encode_graph(instance, params.config.features)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let pass = forward_on_tape(&mut tape, params, &vars, &[&enc], NormMode::Eval)?;
    Ok(pass.attention.iter().map(|a| tape.value(*a).data().to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use d2d_core::Matrix;

    fn small() -> TgtConfig {
        TgtConfig { d: 4, heads: 2, layers: 2, ..TgtConfig::default() }
    }

    fn instance(n: usize, seed: u64) -> ChannelInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Matrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(0.5..1.0) } else { rng.gen_range(0.0..0.3) });
        ChannelInstance::new(h, 1e-3, vec![1.0; n], 1.0).unwrap()
    }

    #[test]
    fn init_is_seeded() {
        let a = TgtParams::init(&small(), 5).unwrap();
        assert_eq!(a, TgtParams::init(&small(), 5).unwrap());
        assert_ne!(a, TgtParams::init(&small(), 6).unwrap());
        for (name, t) in a.names().iter().zip(a.tensors()) {
            if name.ends_with("gain") {
                assert!(t.data().iter().all(|&g| g == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn count_matches_layout() {
        for share_qkv in [true, false] {
            let cfg = TgtConfig { share_qkv, ..small() };
            let p = TgtParams::init(&cfg, 0).unwrap();
            assert_eq!(p.num_params(), cfg.num_params());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = TgtParams::init(&small(), 3).unwrap();
        p.node_bn.running_mean[1] = 0.25;
        let ck = p.to_checkpoint(3, 9);
        let back = TgtParams::from_checkpoint(&small(), &ck).unwrap();
        assert_eq!(back, p);
        let other = TgtConfig { d: 8, ..small() };
        assert!(TgtParams::from_checkpoint(&other, &ck).is_err());
    }

    #[test]
    fn output_in_open_box() {
        let p = TgtParams::init(&small(), 1).unwrap();
        let alloc = forward(&instance(5, 2), &p).unwrap();
        assert!(alloc.p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zeroed_output_norm_gives_half_power() {
        let mut p = TgtParams::init(&small(), 1).unwrap();
        let last = p.names().len() - 2;
        for k in [last, last + 1] {
            p.tensors_mut()[k].data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let alloc = forward(&instance(4, 2), &p).unwrap();
        assert!(alloc.p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mixed_sizes_rejected() {
        let p = TgtParams::init(&small(), 1).unwrap();
        let (a, b) = (instance(3, 1), instance(4, 1));
        assert!(matches!(forward_batch(&p, &[&a, &b]), Err(Error::MixedSizes(3, 4))));
        assert!(matches!(forward_batch(&p, &[]), Err(Error::EmptyBatch)));
    }
}
