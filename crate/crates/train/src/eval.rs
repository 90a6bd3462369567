use std::path::Path;

use d2d_core::{max_power, weighted_sum_rate, wmmse, ChannelInstance, Dataset, WmmseOptions};
use d2d_tgt::TgtParams;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Anything that maps a batch of equally sized instances to powers.
pub trait PowerPolicy: Sync {
    fn name(&self) -> &str;
    fn allocate(&self, batch: &[&ChannelInstance]) -> Result<Vec<Vec<f64>>>;
}

pub struct MaxPower;

impl PowerPolicy for MaxPower {
    fn name(&self) -> &str {
        "max_power"
    }

    fn allocate(&self, batch: &[&ChannelInstance]) -> Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|inst| max_power(inst).p).collect())
    }
}

pub struct Wmmse(pub WmmseOptions);

impl PowerPolicy for Wmmse {
    fn name(&self) -> &str {
        "wmmse"
    }

    fn allocate(&self, batch: &[&ChannelInstance]) -> Result<Vec<Vec<f64>>> {
        batch
            .iter()
            .map(|inst| Ok(wmmse(inst, self.0)?.allocation.p))
            .collect()
    }
}

impl PowerPolicy for TgtParams {
    fn name(&self) -> &str {
        "tgt"
    }

    fn allocate(&self, batch: &[&ChannelInstance]) -> Result<Vec<Vec<f64>>> {
        Ok(d2d_tgt::forward_batch(self, batch)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Weighted sum-rate of each instance, in dataset order.
    pub per_instance: Vec<f64>,
}

/// Splits instance indices into batches of equal network size, preserving
/// order within each size.
pub(crate) fn size_batches(instances: &[ChannelInstance], indices: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut sizes: Vec<usize> = indices.iter().map(|&k| instances[k].n()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = Vec::new();
    for n in sizes {
        let group: Vec<usize> = indices.iter().copied().filter(|&k| instances[k].n() == n).collect();
        out.extend(group.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    out
}

/// Mean and spread of the weighted sum-rate of `policy` over `dataset`.
/// Batches run in parallel; the result does not depend on the batch size
/// or the thread count.
pub fn evaluate<P: PowerPolicy + ?Sized>(policy: &P, dataset: &Dataset, batch_size: usize) -> Result<EvalSummary> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let batches = size_batches(&dataset.instances, &indices, batch_size);
    let scored: Vec<Vec<(usize, f64)>> = batches
        .par_iter()
        .map(|batch| {
            let refs: Vec<&ChannelInstance> = batch.iter().map(|&k| &dataset.instances[k]).collect();
            let powers = policy.allocate(&refs)?;
            batch
                .iter()
                .zip(&powers)
                .map(|(&k, p)| Ok((k, weighted_sum_rate(&dataset.instances[k], p)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut per_instance = vec![0.0; dataset.len()];
    for (k, v) in scored.into_iter().flatten() {
        per_instance[k] = v;
    }
    let (mean, std) = mean_std(&per_instance);
    Ok(EvalSummary { mean, std, per_instance })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row per instance: `instance,topology,n,sum_rate`.
pub fn write_per_instance_csv(path: impl AsRef<Path>, dataset: &Dataset, summary: &EvalSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance", "topology", "n", "sum_rate"])?;
    for (k, value) in summary.per_instance.iter().enumerate() {
        w.write_record([
            k.to_string(),
            dataset.topology_ids[k].to_string(),
            dataset.instances[k].n().to_string(),
            value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
