use std::fmt::Write as _;
use std::path::Path;

use d2d_autodiff::{AdamW, AdamWConfig, NormMode, Tape};
use d2d_core::{weighted_sum_rate, ChannelInstance, Dataset};
use d2d_tgt::{encode_graph, forward_on_tape, GraphEncoding, TgtConfig, TgtParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, size_batches};
use crate::loss::sum_rate_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Share of training topologies held out for checkpoint selection.
    pub val_fraction: f64,
    /// Per-epoch multiplicative learning-rate factor; 1 keeps it constant.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            epochs: 50,
            lr: adam.lr,
            batch_size: 64,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            val_fraction: 0.05,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Mean sum-rate on the validation split, NaN without one.
    pub val_sum_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the best validation sum-rate (the
    /// lowest training loss when there is no validation split).
    pub best: TgtParams,
    pub best_epoch: usize,
    pub last: TgtParams,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    pub train_hash: String,
    pub val_hash: String,
}

/// Loss value and gradients for one batch in training mode; also applies
/// the batch-norm running statistics.
pub fn train_step(params: &mut TgtParams, batch: &[&ChannelInstance]) -> Result<(f64, Vec<Vec<f64>>)> {
    let enc = batch
        .iter()
        .map(|inst| encode_graph(inst, params.config().features))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let refs: Vec<&GraphEncoding> = enc.iter().collect();
    step_encoded(params, batch, &refs, 0, &[])
}

fn step_encoded(
    params: &mut TgtParams,
    batch: &[&ChannelInstance],
    enc: &[&GraphEncoding],
    epoch: usize,
    ids: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let pass = forward_on_tape(&mut tape, params, &vars, enc, NormMode::Train)?;
    let loss = sum_rate_loss(&mut tape, pass.power, batch)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        let n = batch[0].n();
        let powers = tape.value(pass.power).data();
        let bad = batch
            .iter()
            .enumerate()
            .position(|(b, inst)| {
                weighted_sum_rate(inst, &powers[b * n..(b + 1) * n]).map_or(true, |v| !v.is_finite())
            })
            .unwrap_or(0);
        return Err(Error::NonFiniteLoss {
            epoch,
            instance: ids.get(bad).copied().unwrap_or(bad),
        });
    }
    let grads = tape.backward(loss)?;
    let flat = vars
        .iter()
        .map(|&v| grads.get_or_zeros(v, tape.value(v).numel()))
        .collect();
    if let Some(stats) = &pass.stats {
        params.apply_running_stats(stats);
    }
    Ok((value, flat))
}

/// Trains from a fresh initialization seeded by `train_config.seed`.
pub fn train(train_config: &TrainConfig, tgt_config: &TgtConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let params = TgtParams::init(tgt_config, train_config.seed)?;
    train_from(train_config, params, dataset)
}

/// Trains `params` on `dataset` with AdamW. The last `val_fraction` of
/// topologies is held out for checkpoint selection. Every random choice
/// flows from `train_config.seed`, so reruns are bitwise identical.
pub fn train_from(train_config: &TrainConfig, mut params: TgtParams, dataset: &Dataset) -> Result<TrainOutcome> {
    train_config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_set, val_set) = dataset.split_topologies(train_config.val_fraction);
    let features = params.config().features;
    let encoded: Vec<GraphEncoding> = train_set
        .instances
        .iter()
        .map(|inst| encode_graph(inst, features))
        .collect::<std::result::Result<_, _>>()?;

    let mut opt = AdamW::new(train_config.adamw(), params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut warnings = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut previous: Option<f64> = None;

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let mut batches = size_batches(&train_set.instances, &order, train_config.batch_size);
        batches.shuffle(&mut rng);

        let mut total = 0.0;
        let mut first_loss = None;
        for batch in &batches {
            let insts: Vec<&ChannelInstance> = batch.iter().map(|&k| &train_set.instances[k]).collect();
            let enc: Vec<&GraphEncoding> = batch.iter().map(|&k| &encoded[k]).collect();
            let (loss, grads) = step_encoded(&mut params, &insts, &enc, epoch, batch)?;
            first_loss.get_or_insert(loss);
            total += loss * batch.len() as f64;
            opt.step(params.tensors_mut(), &grads)?;
        }
        let loss = total / train_set.len() as f64;
        let baseline = previous.or(first_loss).unwrap_or(loss);
        if loss >= baseline {
            let msg = format!("epoch {epoch}: mean loss {loss:.6} did not improve on {baseline:.6}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        previous = Some(loss);

        let val_sum_rate = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate(&params, &val_set, train_config.batch_size)?.mean
        };
        let score = if val_set.is_empty() { -loss } else { val_sum_rate };
        if score > best.2 {
            best = (params.clone(), epoch, score);
        }
        log::info!("epoch {epoch}: loss {loss:.6}, validation sum-rate {val_sum_rate:.4}");
        history.push(EpochRecord { epoch, loss, val_sum_rate });
        opt.config.lr *= train_config.lr_decay;
    }

    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        last: params,
        history,
        warnings,
        train_hash: train_set.content_hash(),
        val_hash: val_set.content_hash(),
    })
}

/// `epoch,loss,val_sum_rate`.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for record in history {
        w.serialize(record)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text description of a trained model.
pub fn model_card(
    tgt_config: &TgtConfig,
    train_config: &TrainConfig,
    outcome: &TrainOutcome,
    dataset_hash: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# TGT model card");
    let _ = writeln!(s);
    let _ = writeln!(s, "trainable parameters: {}", tgt_config.num_params());
    let _ = writeln!(s, "model config: {tgt_config:?}");
    let _ = writeln!(s, "model config hash: {}", tgt_config.hash());
    let _ = writeln!(s, "training config: {train_config:?}");
    let _ = writeln!(s, "seed: {}", train_config.seed);
    let _ = writeln!(s, "dataset hash: {dataset_hash}");
    let _ = writeln!(s, "training split hash: {}", outcome.train_hash);
    let _ = writeln!(s, "validation split hash: {}", outcome.val_hash);
    let _ = writeln!(s, "epochs run: {}", outcome.history.len());
    let _ = writeln!(s, "selected epoch: {}", outcome.best_epoch);
    if let Some(rec) = outcome.history.get(outcome.best_epoch) {
        let _ = writeln!(s, "selected validation sum-rate: {}", rec.val_sum_rate);
    }
    let _ = writeln!(s, "loss: negative mean weighted sum-rate on the unnormalized channel");
    let _ = writeln!(
        s,
        "validation: last {:.0}% of training topologies, best epoch kept",
        100.0 * train_config.val_fraction
    );
    s
}
