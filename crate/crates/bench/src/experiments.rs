use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use d2d_autodiff::{grad_check, Checkpoint, GradCheckReport, NormMode};
use d2d_core::dataset::encode_dataset;
use d2d_core::{allocation_homophily, gen_dataset, gen_fixed_topology, wmmse, ChannelParams, Dataset, DatasetSpec, WmmseOptions};
use d2d_tgt::{encode_graph, forward_batch, forward_on_tape, TgtConfig, TgtParams};
use d2d_train::{evaluate, mean_std, model_card, sum_rate_loss, train, EpochRecord, EvalSummary, MaxPower, PowerPolicy, TrainConfig, Wmmse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, ExperimentSpec, Method, SweepVariable};
use crate::plot::{histogram, line_chart, Series};
use crate::report::{num, Manifest, Report, Table};

/// Every experiment name accepted by [`run`].
pub const EXPERIMENTS: &[&str] = &[
    "gen-data", "train", "eval", "table1", "table2", "table3", "table4", "fig2", "fig3", "fig4", "fig5", "gradcheck",
];

/// Checkpoint role read by the `eval` experiment.
pub const EVAL_ROLE: &str = "eval";

pub fn run(name: &str, cfg: &BenchConfig) -> anyhow::Result<Report> {
    match name {
        "gen-data" => gen_data(cfg),
        "train" => train_model(cfg),
        "eval" => eval_model(cfg),
        "table1" => table1(cfg),
        "table2" => table2(cfg),
        "table3" => table3(cfg),
        "table4" => table4(cfg),
        "fig2" => fig2(cfg),
        "fig3" => fig3(cfg),
        "fig4" => fig4(cfg),
        "fig5" => fig5(cfg),
        "gradcheck" => gradcheck(cfg).map(|(report, _)| report),
        other => bail!("unknown experiment `{other}`; expected one of {}", EXPERIMENTS.join(", ")),
    }
}

/// Reruns the experiment recorded in `manifest` and lists every output
/// whose hash differs from the recorded one.
pub fn rerun(manifest: &Manifest) -> anyhow::Result<(Report, Vec<String>)> {
    let report = run(&manifest.spec.name, &manifest.config)?;
    let fresh = report.output_hashes();
    let mut mismatches: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|(name, hash)| fresh.get(*name) != Some(*hash))
        .map(|(name, _)| name.clone())
        .collect();
    mismatches.extend(fresh.keys().filter(|k| !manifest.outputs.contains_key(*k)).cloned());
    Ok((report, mismatches))
}

/// Model configuration for the width study: `heads = d / 2`.
pub fn width_config(base: &TgtConfig, d: usize) -> TgtConfig {
    TgtConfig {
        d,
        heads: (d / 2).max(1),
        ..base.clone()
    }
}

/// Column label for a field half-width, rounding halves down.
pub fn half_width_label(v: f64) -> String {
    let r = if (v - v.trunc()).abs() == 0.5 { v.floor() } else { v.round() };
    format!("{r}")
}

pub fn wmmse_policy(cfg: &BenchConfig) -> Wmmse {
    Wmmse(WmmseOptions::iterations(cfg.eval.wmmse_iterations))
}

/// Training set shared by `gen-data` and `train`.
pub fn training_spec(cfg: &BenchConfig) -> DatasetSpec {
    DatasetSpec {
        n_list: cfg.data.n_list.clone(),
        topologies: cfg.data.topologies,
        fades_per_topology: cfg.data.fades_per_topology,
        channel: cfg.channel.clone(),
        seed: cfg.derive_seed("data"),
    }
}

/// Evaluation set for size `n` under `channel`. The seed depends only on
/// `label`, so every method and every sweep point with the same label sees
/// the same draws.
pub fn eval_spec(cfg: &BenchConfig, n: usize, channel: ChannelParams, label: &str) -> DatasetSpec {
    DatasetSpec {
        n_list: vec![n],
        topologies: cfg.eval.topologies,
        fades_per_topology: cfg.eval.fades_per_topology,
        channel,
        seed: cfg.derive_seed(label),
    }
}

struct Run<'a> {
    cfg: &'a BenchConfig,
    report: Report,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a BenchConfig, spec: ExperimentSpec) -> anyhow::Result<Self> {
        spec.validate()?;
        log::info!("running {}", spec.name);
        Ok(Self {
            cfg,
            report: Report::new(Manifest::new(spec, cfg)),
        })
    }

    fn dataset(&mut self, role: &str, spec: &DatasetSpec) -> anyhow::Result<Dataset> {
        let ds = gen_dataset(spec).with_context(|| format!("generating dataset `{role}`"))?;
        self.report.manifest.dataset(role, &ds);
        Ok(ds)
    }

    fn eval_set(&mut self, n: usize, channel: ChannelParams, label: &str) -> anyhow::Result<Dataset> {
        let spec = eval_spec(self.cfg, n, channel, label);
        self.dataset(label, &spec)
    }

    fn model(&mut self, role: &str, model: &TgtConfig) -> anyhow::Result<TgtParams> {
        let path = self
            .cfg
            .models
            .get(role)
            .ok_or_else(|| anyhow!("missing checkpoint `{role}`: set models.{role} in the config"))?;
        let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let checkpoint = Checkpoint::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        let params = TgtParams::from_checkpoint(model, &checkpoint)
            .with_context(|| format!("checkpoint {} does not fit the model config", path.display()))?;
        let manifest = &mut self.report.manifest;
        manifest.checkpoints.insert(role.to_string(), crate::report::sha256_hex(&bytes));
        manifest.parameter_counts.insert(role.to_string(), params.num_params());
        Ok(params)
    }

    fn summary(&self, policy: &dyn PowerPolicy, ds: &Dataset) -> anyhow::Result<EvalSummary> {
        let s = evaluate(policy, ds, self.cfg.eval.batch_size)?;
        log::info!("{}: mean {:.4} over {} instances", policy.name(), s.mean, ds.len());
        Ok(s)
    }
}

fn history_table(history: &[EpochRecord]) -> Table {
    let mut t = Table::new(["epoch", "loss", "val_sum_rate"]);
    for r in history {
        t.push(vec![r.epoch.to_string(), num(r.loss), num(r.val_sum_rate)]);
    }
    t
}

pub fn gen_data(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let spec = ExperimentSpec::new("gen-data", cfg);
    let mut run = Run::new(cfg, spec)?;
    let ds = run.dataset("train", &training_spec(cfg))?;
    run.report.file("train.d2d", encode_dataset(&ds));
    Ok(run.report)
}

pub fn train_model(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let spec = ExperimentSpec::new("train", cfg);
    let mut run = Run::new(cfg, spec)?;
    let ds = run.dataset("train", &training_spec(cfg))?;
    let outcome = train(&cfg.train, &cfg.model, &ds)?;
    let best = &outcome.best;
    let checkpoint = best.to_checkpoint(cfg.train.seed, outcome.best_epoch as u64);
    let report = &mut run.report;
    report.manifest.parameter_counts.insert("model".into(), best.num_params());
    report.manifest.checkpoints.insert("model".into(), crate::report::sha256_hex(&checkpoint.to_bytes()));
    report.file("model.ckpt", checkpoint.to_bytes());
    report.table("history", history_table(&outcome.history))?;
    report.file("model_card.txt", model_card(&cfg.model, &cfg.train, &outcome, &ds.content_hash()).into_bytes());
    Ok(run.report)
}

/// Baselines and the checkpoint in `models.eval` on the evaluation set of
/// every size in `data.n_list`.
pub fn eval_model(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let methods = [Method::MaxPower, Method::Wmmse, Method::Tgt];
    let spec = ExperimentSpec::new("eval", cfg)
        .methods(&methods)
        .sweep(SweepVariable::NetworkSize, cfg.data.n_list.iter().map(|&n| n as f64));
    let mut run = Run::new(cfg, spec)?;
    let model = run.model(EVAL_ROLE, &cfg.model)?;
    let wm = wmmse_policy(cfg);
    let mut summary = Table::new(["method", "n", "mean", "std", "instances"]);
    let mut per_instance = Table::new(["method", "n", "instance", "topology", "sum_rate"]);
    for &n in &cfg.data.n_list {
        let ds = run.eval_set(n, cfg.channel.clone(), &format!("eval.n{n}"))?;
        let policies: [&dyn PowerPolicy; 3] = [&MaxPower, &wm, &model];
        for (method, policy) in methods.iter().zip(policies) {
            let s = run.summary(policy, &ds)?;
            summary.push(vec![method.label().into(), n.to_string(), num(s.mean), num(s.std), ds.len().to_string()]);
            for (k, (v, topo)) in s.per_instance.iter().zip(&ds.topology_ids).enumerate() {
                per_instance.push(vec![method.label().into(), n.to_string(), k.to_string(), topo.to_string(), num(*v)]);
            }
        }
    }
    run.report.table("eval", summary)?;
    run.report.table("eval_instances", per_instance)?;
    Ok(run.report)
}

/// Mean weighted homophily of WMMSE allocations across the noise grid.
pub fn table1(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let s = &cfg.sweeps;
    let spec = ExperimentSpec::new("table1", cfg)
        .methods(&[Method::Wmmse])
        .sweep(SweepVariable::NoisePower, s.sigma2_grid.iter().copied());
    let mut run = Run::new(cfg, spec)?;
    let opts = WmmseOptions::iterations(cfg.eval.wmmse_iterations);
    let seed = cfg.derive_seed("table1");
    let mut table = Table::new(["sigma2", "homophily", "std", "mean_power", "instances"]);
    for &sigma2 in &s.sigma2_grid {
        let spec = DatasetSpec {
            n_list: vec![s.homophily_n],
            topologies: s.homophily_instances,
            fades_per_topology: 1,
            channel: ChannelParams { sigma2, ..cfg.channel.clone() },
            seed,
        };
        let ds = run.dataset(&format!("sigma2={sigma2:e}"), &spec)?;
        let rows = ds
            .instances
            .par_iter()
            .map(|inst| {
                let out = wmmse(inst, opts)?;
                let report = allocation_homophily(inst, &out.allocation.p)?;
                let mean_p = out.allocation.p.iter().sum::<f64>() / (inst.n() as f64 * inst.pmax());
                Ok((report.h, mean_p))
            })
            .collect::<d2d_core::Result<Vec<(f64, f64)>>>()?;
        let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let ps: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let (h, h_std) = mean_std(&hs);
        log::info!("sigma2 {sigma2:e}: homophily {h:.4}");
        table.push(vec![num(sigma2), num(h), num(h_std), num(mean_std(&ps).0), ds.len().to_string()]);
    }
    run.report.table("table1", table)?;
    Ok(run.report)
}

/// Mean sum-rate per method and network size.
pub fn table2(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let sizes = &cfg.sweeps.sizes;
    let methods = &cfg.eval.methods;
    let spec = ExperimentSpec::new("table2", cfg)
        .methods(methods)
        .sweep(SweepVariable::NetworkSize, sizes.iter().map(|&n| n as f64));
    let mut run = Run::new(cfg, spec)?;

    let multinode = match methods.contains(&Method::TgtMultinode) {
        true => Some(run.model("multinode", &cfg.model)?),
        false => None,
    };
    let mut per_size = BTreeMap::new();
    if methods.contains(&Method::Tgt) {
        for &n in sizes {
            per_size.insert(n, run.model(&format!("n{n}"), &cfg.model)?);
        }
    }

    let wm = wmmse_policy(cfg);
    let mut means: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let mut long = Table::new(["method", "n", "mean", "std", "instances"]);
    for &n in sizes {
        let ds = run.eval_set(n, cfg.channel.clone(), &format!("eval.n{n}"))?;
        for &m in methods {
            let policy: &dyn PowerPolicy = match m {
                Method::MaxPower => &MaxPower,
                Method::Wmmse => &wm,
                Method::Tgt => &per_size[&n],
                Method::TgtMultinode => multinode.as_ref().expect("loaded above"),
            };
            let s = run.summary(policy, &ds)?;
            long.push(vec![m.label().into(), n.to_string(), num(s.mean), num(s.std), ds.len().to_string()]);
            means.entry(m).or_default().push(s.mean);
        }
    }

    let mut table = Table::new(std::iter::once("method".to_string()).chain(sizes.iter().map(|n| format!("n{n}"))));
    for (m, row) in &means {
        table.push(std::iter::once(m.label().to_string()).chain(row.iter().map(|&v| num(v))).collect());
    }
    if let (Some(tgt), Some(mp)) = (means.get(&Method::Tgt), means.get(&Method::MaxPower)) {
        let ratio = tgt.iter().zip(mp).map(|(t, p)| num(t / p));
        table.push(std::iter::once("tgt/max_power".to_string()).chain(ratio).collect());
    }
    run.report.table("table2", table)?;
    run.report.table("table2_long", long)?;
    Ok(run.report)
}

fn sweep_methods(cfg: &BenchConfig) -> Vec<Method> {
    cfg.eval.methods.iter().copied().filter(|&m| m != Method::TgtMultinode).collect()
}

/// Methods as rows, one column per channel variant. All variants share
/// one seed, so topologies and fading draws line up across columns.
fn channel_sweep(
    cfg: &BenchConfig,
    name: &str,
    variable: SweepVariable,
    values: &[f64],
    label: impl Fn(f64) -> String,
    channel: impl Fn(f64) -> ChannelParams,
) -> anyhow::Result<Report> {
    let methods = sweep_methods(cfg);
    let n = cfg.sweeps.sweep_n;
    let spec = ExperimentSpec::new(name, cfg).methods(&methods).sweep(variable, values.iter().copied());
    let mut run = Run::new(cfg, spec)?;
    let model = match methods.contains(&Method::Tgt) {
        true => Some(run.model(&format!("n{n}"), &cfg.model)?),
        false => None,
    };
    let wm = wmmse_policy(cfg);
    let mut means: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let spec_seed = cfg.derive_seed(name);
    for &v in values {
        let spec = DatasetSpec {
            n_list: vec![n],
            topologies: cfg.eval.topologies,
            fades_per_topology: cfg.eval.fades_per_topology,
            channel: channel(v),
            seed: spec_seed,
        };
        let ds = run.dataset(&format!("{name}.{}", label(v)), &spec)?;
        for &m in &methods {
            let policy: &dyn PowerPolicy = match m {
                Method::MaxPower => &MaxPower,
                Method::Wmmse => &wm,
                _ => model.as_ref().expect("loaded above"),
            };
            means.entry(m).or_default().push(run.summary(policy, &ds)?.mean);
        }
    }
    let mut table = Table::new(std::iter::once("method".to_string()).chain(values.iter().map(|&v| label(v))));
    for (m, row) in &means {
        table.push(std::iter::once(m.label().to_string()).chain(row.iter().map(|&v| num(v))).collect());
    }
    run.report.table(name, table)?;
    Ok(run.report)
}

/// Rayleigh scale sweep with the checkpoint trained at scale 1.
pub fn table3(cfg: &BenchConfig) -> anyhow::Result<Report> {
    channel_sweep(
        cfg,
        "table3",
        SweepVariable::FadingScale,
        &cfg.sweeps.fading_scales,
        |v| format!("{v}"),
        |v| ChannelParams { fading_scale: v, ..cfg.channel.clone() },
    )
}

/// Field half-width sweep at fixed `n`.
pub fn table4(cfg: &BenchConfig) -> anyhow::Result<Report> {
    channel_sweep(
        cfg,
        "table4",
        SweepVariable::FieldHalfWidth,
        &cfg.sweeps.half_widths,
        half_width_label,
        |v| ChannelParams { half_width: Some(v), ..cfg.channel.clone() },
    )
}

/// Paired statistics of `a - b` over the same instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub std_diff: f64,
    pub a_wins: f64,
}

pub fn paired_stats(a: &[f64], b: &[f64]) -> PairedStats {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean_diff, std_diff) = mean_std(&diff);
    PairedStats {
        mean_a: mean_std(a).0,
        mean_b: mean_std(b).0,
        mean_diff,
        std_diff,
        a_wins: diff.iter().filter(|&&d| d > 0.0).count() as f64 / diff.len().max(1) as f64,
    }
}

/// Equal-width bins spanning both samples.
pub fn bin_counts(samples: &[&[f64]], bins: usize) -> (Vec<f64>, Vec<Vec<usize>>) {
    let all = samples.iter().flat_map(|s| s.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let counts = samples
        .iter()
        .map(|s| {
            let mut c = vec![0usize; bins];
            for &v in s.iter() {
                let k = (((v - lo) / width).floor() as usize).min(bins - 1);
                c[k] += 1;
            }
            c
        })
        .collect();
    (edges, counts)
}

/// Per-instance sum-rate histograms of TGT and WMMSE on one fixed topology.
pub fn fig2(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let s = &cfg.sweeps;
    let spec = ExperimentSpec::new("fig2", cfg).methods(&[Method::Tgt, Method::Wmmse]);
    let mut run = Run::new(cfg, spec)?;
    let model = run.model(&format!("n{}", s.histogram_n), &cfg.model)?;
    let ds = gen_fixed_topology(s.histogram_n, s.histogram_fades, &cfg.channel, cfg.derive_seed("fig2"))?;
    run.report.manifest.dataset("fig2", &ds);
    let tgt = run.summary(&model, &ds)?.per_instance;
    let wm = run.summary(&wmmse_policy(cfg), &ds)?.per_instance;

    let (edges, counts) = bin_counts(&[&tgt, &wm], s.histogram_bins.max(1));
    let mut hist = Table::new(["bin_lo", "bin_hi", "tgt", "wmmse"]);
    for k in 0..edges.len() - 1 {
        hist.push(vec![num(edges[k]), num(edges[k + 1]), counts[0][k].to_string(), counts[1][k].to_string()]);
    }
    let p = paired_stats(&tgt, &wm);
    let mut summary = Table::new(["statistic", "value"]);
    for (k, v) in [
        ("instances", tgt.len() as f64),
        ("mean_tgt", p.mean_a),
        ("mean_wmmse", p.mean_b),
        ("mean_difference", p.mean_diff),
        ("std_difference", p.std_diff),
        ("tgt_wins_fraction", p.a_wins),
    ] {
        summary.push(vec![k.into(), num(v)]);
    }
    let svg = histogram(
        &format!("Sum-rate over {} fades, n = {}", tgt.len(), s.histogram_n),
        "sum-rate (bit/s/Hz)",
        &edges,
        &[("TGT", counts[0].clone()), ("WMMSE", counts[1].clone())],
    );
    run.report.table("fig2_histogram", hist)?;
    run.report.table("fig2_summary", summary)?;
    run.report.file("fig2.svg", svg.into_bytes());
    Ok(run.report)
}

/// Normalized sum-rate of each model over the size sweep. Columns are
/// `n`, the WMMSE mean, max power and every model divided by that mean.
fn size_sweep(run: &mut Run, models: &[(String, TgtParams)]) -> anyhow::Result<Table> {
    let cfg = run.cfg;
    let s = &cfg.sweeps;
    let wm = wmmse_policy(cfg);
    let mut columns = vec!["n".to_string(), "wmmse_mean".into(), "wmmse".into(), "max_power".into()];
    columns.extend(models.iter().map(|(role, _)| role.clone()));
    let mut table = Table::new(columns);
    for &n in &s.size_sweep {
        let label = format!("sweep.n{n}");
        let spec = DatasetSpec {
            n_list: vec![n],
            topologies: s.size_sweep_topologies,
            fades_per_topology: s.size_sweep_fades,
            channel: cfg.channel.clone(),
            seed: cfg.derive_seed(&label),
        };
        let ds = run.dataset(&label, &spec)?;
        let reference = run.summary(&wm, &ds)?.mean;
        let mut row = vec![n.to_string(), num(reference), num(1.0), num(run.summary(&MaxPower, &ds)?.mean / reference)];
        for (_, params) in models {
            row.push(num(run.summary(params, &ds)?.mean / reference));
        }
        table.push(row);
    }
    Ok(table)
}

fn sweep_chart(title: &str, table: &Table, curves: &[String]) -> String {
    let xs = table.column("n");
    let series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            name: c.clone(),
            points: xs.iter().copied().zip(table.column(c)).collect(),
        })
        .collect();
    line_chart(title, "number of pairs n", "sum-rate / WMMSE", &series, false)
}

/// Size generalization of the fixed-size and multi-size checkpoints.
pub fn fig3(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let s = &cfg.sweeps;
    let spec = ExperimentSpec::new("fig3", cfg)
        .methods(&[Method::MaxPower, Method::Wmmse, Method::Tgt, Method::TgtMultinode])
        .sweep(SweepVariable::NetworkSize, s.size_sweep.iter().map(|&n| n as f64));
    let mut run = Run::new(cfg, spec)?;
    let models = s
        .generalization_models
        .iter()
        .map(|role| Ok((role.clone(), run.model(role, &cfg.model)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let table = size_sweep(&mut run, &models)?;
    let mut curves = vec!["wmmse".to_string(), "max_power".into()];
    curves.extend(s.generalization_models.iter().cloned());
    run.report.file("fig3.svg", sweep_chart("Size generalization", &table, &curves).into_bytes());
    run.report.table("fig3", table)?;
    Ok(run.report)
}

/// Median wall time of one eval-mode forward pass per network size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityProbe {
    pub sizes: Vec<usize>,
    pub seconds: Vec<f64>,
    /// `seconds[k + 1] / seconds[k]`.
    pub ratios: Vec<f64>,
}

pub fn complexity_probe(cfg: &BenchConfig) -> anyhow::Result<ComplexityProbe> {
    let s = &cfg.sweeps;
    let params = TgtParams::init(&cfg.model, cfg.derive_seed("complexity"))?;
    let mut instances = Vec::with_capacity(s.complexity_sizes.len());
    for &n in &s.complexity_sizes {
        let spec = DatasetSpec {
            n_list: vec![n],
            topologies: 1,
            fades_per_topology: 1,
            channel: cfg.channel.clone(),
            seed: cfg.derive_seed("complexity"),
        };
        let ds = gen_dataset(&spec)?;
        forward_batch(&params, &[&ds.instances[0]])?;
        instances.push(ds.instances.into_iter().next().expect("one instance"));
    }
    // One sample per size per round.
    let rounds = s.complexity_repeats.max(1);
    let mut samples = vec![Vec::with_capacity(rounds); instances.len()];
    for _ in 0..rounds {
        for (inst, out) in instances.iter().zip(&mut samples) {
            let batch = [inst];
            let start = Instant::now();
            let mut count = 0u32;
            while count == 0 || start.elapsed() < Duration::from_millis(200) {
                std::hint::black_box(forward_batch(&params, &batch)?);
                count += 1;
            }
            out.push(start.elapsed().as_secs_f64() / f64::from(count));
        }
    }
    let seconds: Vec<f64> = samples
        .iter_mut()
        .map(|v| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();
    for (n, t) in s.complexity_sizes.iter().zip(&seconds) {
        log::info!("forward at n = {n}: {:.3} ms", t * 1e3);
    }
    let ratios = seconds.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(ComplexityProbe {
        sizes: s.complexity_sizes.clone(),
        seconds,
        ratios,
    })
}

/// Trains one model per width at `scaling_n`, reports sum-rate against
/// parameter count, and times the forward pass.
pub fn fig4(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let s = &cfg.sweeps;
    let n = s.scaling_n;
    let spec = ExperimentSpec::new("fig4", cfg)
        .methods(&[Method::MaxPower, Method::Wmmse, Method::Tgt])
        .sweep(SweepVariable::ModelWidth, s.widths.iter().map(|&d| d as f64));
    let mut run = Run::new(cfg, spec)?;
    let train_spec = DatasetSpec {
        n_list: vec![n],
        topologies: cfg.data.topologies,
        fades_per_topology: cfg.data.fades_per_topology,
        channel: cfg.channel.clone(),
        seed: cfg.derive_seed("fig4.train"),
    };
    let train_set = run.dataset("fig4.train", &train_spec)?;
    let eval_set = run.eval_set(n, cfg.channel.clone(), &format!("eval.n{n}"))?;
    let wm = run.summary(&wmmse_policy(cfg), &eval_set)?.mean;
    let mp = run.summary(&MaxPower, &eval_set)?.mean;

    let mut table = Table::new(["d", "heads", "params", "tgt", "wmmse", "max_power", "normalized", "best_epoch"]);
    for &d in &s.widths {
        let model = width_config(&cfg.model, d);
        let train_cfg = TrainConfig {
            seed: cfg.derive_seed(&format!("fig4.d{d}")),
            ..cfg.train.clone()
        };
        log::info!("training width {d} ({} parameters)", model.num_params());
        let outcome = train(&train_cfg, &model, &train_set)?;
        let tgt = run.summary(&outcome.best, &eval_set)?.mean;
        table.push(vec![
            d.to_string(),
            model.heads.to_string(),
            model.num_params().to_string(),
            num(tgt),
            num(wm),
            num(mp),
            num(tgt / wm),
            outcome.best_epoch.to_string(),
        ]);
        let role = format!("d{d}");
        let bytes = outcome.best.to_checkpoint(train_cfg.seed, outcome.best_epoch as u64).to_bytes();
        run.report.manifest.parameter_counts.insert(role.clone(), model.num_params());
        run.report.manifest.checkpoints.insert(role.clone(), crate::report::sha256_hex(&bytes));
        run.report.file(&format!("{role}.ckpt"), bytes);
        run.report.table(&format!("{role}_history"), history_table(&outcome.history))?;
    }

    let points = |col: &str| table.column("params").into_iter().zip(table.column(col)).collect();
    let svg = line_chart(
        &format!("Sum-rate against model size, n = {n}"),
        "trainable parameters",
        "sum-rate / WMMSE",
        &[
            Series { name: "TGT".into(), points: points("normalized") },
            Series { name: "WMMSE".into(), points: table.column("params").into_iter().map(|p| (p, 1.0)).collect() },
        ],
        true,
    );
    run.report.file("fig4.svg", svg.into_bytes());
    run.report.table("fig4", table)?;

    let probe = complexity_probe(cfg)?;
    run.report.timing.insert("timing.json".into(), serde_json::to_vec_pretty(&probe)?);
    Ok(run.report)
}

/// Size generalization of the width-study checkpoints `d{width}`.
pub fn fig5(cfg: &BenchConfig) -> anyhow::Result<Report> {
    let s = &cfg.sweeps;
    let spec = ExperimentSpec::new("fig5", cfg)
        .methods(&[Method::MaxPower, Method::Wmmse, Method::Tgt])
        .sweep(SweepVariable::NetworkSize, s.size_sweep.iter().map(|&n| n as f64));
    let mut run = Run::new(cfg, spec)?;
    let models = s
        .widths
        .iter()
        .map(|&d| {
            let role = format!("d{d}");
            let params = run.model(&role, &width_config(&cfg.model, d))?;
            Ok((role, params))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let table = size_sweep(&mut run, &models)?;
    let mut curves = vec!["wmmse".to_string()];
    curves.extend(models.iter().map(|(role, _)| role.clone()));
    run.report.file("fig5.svg", sweep_chart("Size generalization by width", &table, &curves).into_bytes());
    run.report.table("fig5", table)?;
    Ok(run.report)
}

/// Tape gradients of the sum-rate loss against central differences for
/// the configured model on a 4-pair instance. Parameters and running
/// statistics are perturbed away from the initialization.
pub fn gradcheck(cfg: &BenchConfig) -> anyhow::Result<(Report, GradCheckReport)> {
    let spec = ExperimentSpec::new("gradcheck", cfg);
    let mut run = Run::new(cfg, spec)?;
    let seed = cfg.derive_seed("gradcheck");
    let ds = run.dataset("gradcheck", &DatasetSpec {
        n_list: vec![4],
        topologies: 1,
        fades_per_topology: 1,
        channel: cfg.channel.clone(),
        seed,
    })?;
    let inst = ds.instances[0].clone();

    let mut params = TgtParams::init(&cfg.model, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    for bn in [&mut params.node_bn, &mut params.edge_bn] {
        bn.running_mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.5..0.5));
        bn.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.2..2.0));
    }
    let enc = encode_graph(&inst, cfg.model.features)?;
    let as_tape_err = |e: &dyn std::fmt::Display| d2d_autodiff::Error::Shape {
        op: "sum-rate loss",
        detail: e.to_string(),
    };
    let report = grad_check(params.tensors(), 1e-5, |tape, vars| {
        let pass = forward_on_tape(tape, &params, vars, &[&enc], NormMode::Eval).map_err(|e| as_tape_err(&e))?;
        sum_rate_loss(tape, pass.power, &[&inst]).map_err(|e| as_tape_err(&e))
    })?;

    let mut table = Table::new(["tensor", "numel", "max_abs_error", "rel_error"]);
    for t in &report.tensors {
        table.push(vec![
            params.names()[t.index].clone(),
            t.numel.to_string(),
            num(t.max_abs_error),
            num(t.rel_error),
        ]);
    }
    run.report.table("gradcheck", table)?;
    run.report.manifest.parameter_counts.insert("model".into(), params.num_params());
    Ok((run.report, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_width_labels_match_column_names() {
        let labels: Vec<String> = [200.0, 150.0, 100.0, 50.0, 25.0, 50.0 / 3.0, 12.5].into_iter().map(half_width_label).collect();
        assert_eq!(labels, ["200", "150", "100", "50", "25", "17", "12"]);
    }

    #[test]
    fn width_config_halves_heads() {
        let c = width_config(&TgtConfig::default(), 104);
        assert_eq!((c.d, c.heads), (104, 52));
        assert!(width_config(&TgtConfig::default(), 4).validate().is_ok());
    }

    #[test]
    fn paired_difference_is_difference_of_means() {
        let a = [3.0, 5.0, 10.0];
        let b = [4.0, 1.0, 2.0];
        let p = paired_stats(&a, &b);
        assert!((p.mean_diff - (p.mean_a - p.mean_b)).abs() < 1e-12);
        assert!((p.a_wins - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bins_hold_every_sample() {
        let a = [0.0, 0.5, 1.0, 2.0];
        let b = [1.5, 1.5];
        let (edges, counts) = bin_counts(&[&a, &b], 4);
        assert_eq!(edges.len(), 5);
        assert_eq!(counts[0].iter().sum::<usize>(), 4);
        assert_eq!(counts[1], vec![0, 0, 0, 2]);
        assert_eq!(counts[0], vec![1, 1, 1, 1]);
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let cfg = BenchConfig::default();
        let err = table2(&cfg).unwrap_err().to_string();
        assert!(err.contains("missing checkpoint"), "{err}");
    }

    #[test]
    fn unknown_experiment_is_an_error() {
        assert!(run("table9", &BenchConfig::default()).is_err());
    }
}
