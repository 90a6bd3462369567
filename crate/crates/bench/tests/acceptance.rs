//! Acceptance criteria. Each test prints one `PASS` or `FAIL` line to
//! stderr (uncaptured) and then asserts. Tests hold a shared lock so the
//! timing criterion runs on an idle machine.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use d2d_bench::experiments::{self, complexity_probe, eval_spec, gradcheck, wmmse_policy};
use d2d_bench::{BenchConfig, Manifest};
use d2d_core::{
    gen_dataset, grid_oracle, wmmse, ChannelInstance, ChannelParams, Dataset, DatasetSpec, Matrix, WmmseOptions,
};
use d2d_tgt::{attention_maps, forward, TgtConfig, TgtParams};
use d2d_train::{evaluate, train, MaxPower, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[criterion {id:>2}] {verdict} {title}: {detail}");
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

/// Reduced training recipe shipped in `configs/desk.toml`.
fn desk() -> BenchConfig {
    BenchConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml")).unwrap()
}

/// 50 topologies x 50 fades per size, shared with the table experiments.
fn eval_set(cfg: &BenchConfig, n: usize) -> Dataset {
    gen_dataset(&eval_spec(cfg, n, cfg.channel.clone(), &format!("eval.n{n}"))).unwrap()
}

#[test]
fn c01_max_power_matches_reported_means() {
    let _g = serial();
    let cfg = BenchConfig::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, target) in [(20, 62.547), (50, 106.364)] {
        let ds = eval_set(&cfg, n);
        assert!(ds.len() >= 2000);
        let mean = evaluate(&MaxPower, &ds, 64).unwrap().mean;
        pass &= within(mean, target, 0.03);
        detail.push(format!("n={n} {mean:.3} vs {target} ({} instances)", ds.len()));
    }
    report(1, "max-power sum-rate within 3%", pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn c02_wmmse_matches_reported_means() {
    let _g = serial();
    let cfg = BenchConfig::default();
    let opts = WmmseOptions::iterations(100);
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, target) in [(20, 84.563), (50, 147.463)] {
        let ds = eval_set(&cfg, n);
        let rows: Vec<(f64, f64, bool)> = ds
            .instances
            .par_iter()
            .map(|inst| {
                let out = wmmse(inst, opts).unwrap();
                let rate = out.allocation.weighted_sum_rate(inst).unwrap();
                let full = vec![inst.pmax(); inst.n()];
                let base = d2d_core::weighted_sum_rate(inst, &full).unwrap();
                let monotone = out.history.windows(2).all(|w| w[1] >= w[0] - 1e-9);
                (rate, base, monotone)
            })
            .collect();
        let mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
        let dominated = rows.iter().filter(|r| r.0 < r.1 - 1e-9).count();
        let non_monotone = rows.iter().filter(|r| !r.2).count();
        pass &= within(mean, target, 0.03) && dominated == 0 && non_monotone == 0;
        detail.push(format!(
            "n={n} {mean:.3} vs {target}, below max power {dominated}, non-monotone {non_monotone}"
        ));
    }
    report(2, "WMMSE sum-rate within 3%, dominance, monotone sweeps", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c03_wmmse_near_grid_oracle_on_two_pairs() {
    let _g = serial();
    let ds = gen_dataset(&DatasetSpec::single(2, 1000, 1, 303)).unwrap();
    let ratios: Vec<f64> = ds
        .instances
        .par_iter()
        .map(|inst| {
            let wm = wmmse(inst, WmmseOptions::default()).unwrap().allocation.weighted_sum_rate(inst).unwrap();
            let best = grid_oracle(inst, 101).unwrap().weighted_sum_rate(inst).unwrap();
            wm / best
        })
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;

    let single = ChannelInstance::new(Matrix::from_vec(1, 1, vec![0.01]).unwrap(), 2.6e-5, vec![1.0], 1.0).unwrap();
    let p = wmmse(&single, WmmseOptions::default()).unwrap().allocation.p;
    let pass = mean_ratio >= 0.9 && p == vec![1.0];
    report(
        3,
        "WMMSE vs 101-level grid on 1000 two-pair instances",
        pass,
        &format!("mean ratio {mean_ratio:.4}, worst {:.4}, n=1 power {p:?}", ratios.iter().copied().fold(f64::INFINITY, f64::min)),
    );
    assert!(pass);
}

#[test]
fn c04_homophily_rises_with_noise() {
    let _g = serial();
    let cfg = BenchConfig::default();
    assert!(cfg.sweeps.homophily_instances >= 100);
    let rep = experiments::table1(&cfg).unwrap();
    let h = rep.tables["table1"].column("homophily");
    assert_eq!(h.len(), 7);
    let increasing = h.windows(2).all(|w| w[1] > w[0]);
    let low = (h[0] - 0.417).abs() <= 0.10;
    let high = (h[6] - 0.914).abs() <= 0.10;
    let pass = increasing && low && high;
    let values: Vec<String> = h.iter().map(|v| format!("{v:.3}")).collect();
    report(
        4,
        "homophily strictly increasing, endpoints near 0.417 and 0.914",
        pass,
        &format!("h = [{}], increasing {increasing}, low end {low}, high end {high}", values.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c05_gradients_match_finite_differences() {
    let _g = serial();
    let cfg = BenchConfig::default();
    assert_eq!(cfg.model, TgtConfig::default());
    let (_, check) = gradcheck(&cfg).unwrap();
    let worst = check.max_rel_error();
    let pass = check.tensors.len() == TgtParams::init(&cfg.model, 0).unwrap().tensors().len() && worst < 1e-4;
    report(5, "default-model gradients vs central differences", pass, &format!("max relative error {worst:.3e} over {} tensors", check.tensors.len()));
    assert!(pass);
}

fn perturbed_default(seed: u64) -> TgtParams {
    let mut p = TgtParams::init(&TgtConfig::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    for bn in [&mut p.node_bn, &mut p.edge_bn] {
        bn.running_mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.5..0.5));
        bn.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.2..2.0));
    }
    p
}

#[test]
fn c06_equivariance_and_shape_suite() {
    let _g = serial();
    let params = perturbed_default(606);
    let ds = gen_dataset(&DatasetSpec::single(12, 8, 1, 606)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(607);
    let (mut perm_err, mut row_err) = (0.0f64, 0.0f64);
    let (mut in_box, mut scale_exact) = (true, true);
    for inst in &ds.instances {
        let n = inst.n();
        let base = forward(inst, &params).unwrap().p;
        in_box &= base.iter().all(|&p| p > 0.0 && p < inst.pmax());

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let moved = forward(&inst.permuted(&perm).unwrap(), &params).unwrap().p;
        for (a, &src) in perm.iter().enumerate() {
            perm_err = perm_err.max((moved[a] - base[src]).abs());
        }

        let heads = params.config().heads;
        for layer in attention_maps(inst, &params).unwrap() {
            for i in 0..n {
                for h in 0..heads {
                    let s: f64 = (0..n).map(|j| layer[(i * n + j) * heads + h]).sum();
                    row_err = row_err.max((s - 1.0).abs());
                }
            }
        }

        for factor in [0.25, 8.0, 1024.0] {
            let scaled = inst.scaled(factor).unwrap();
            scale_exact &= forward(&scaled, &params).unwrap().p == base;
        }
    }
    let pass = perm_err <= 1e-9 && row_err <= 1e-12 && in_box && scale_exact;
    report(
        6,
        "permutation equivariance, attention rows, output box, scale invariance",
        pass,
        &format!("perm error {perm_err:.2e}, row error {row_err:.2e}, in box {in_box}, scale exact {scale_exact}"),
    );
    assert!(pass);
}

/// Reduced recipe: n = 30, 100 topologies x 20 fades, 50 epochs,
/// evaluated on the full 50 x 50 evaluation set.
#[test]
fn c07_desk_scale_training_approaches_wmmse() {
    let _g = serial();
    let cfg = desk();
    assert_eq!((cfg.data.n_list.as_slice(), cfg.data.topologies, cfg.data.fades_per_topology), ([30].as_slice(), 100, 20));
    assert_eq!(cfg.train.epochs, 50);
    let train_set = gen_dataset(&experiments::training_spec(&cfg)).unwrap();
    let outcome = train(&cfg.train, &cfg.model, &train_set).unwrap();
    let test = eval_set(&BenchConfig::default(), 30);
    let tgt = evaluate(&outcome.best, &test, 64).unwrap().mean;
    let wm = evaluate(&wmmse_policy(&cfg), &test, 64).unwrap().mean;
    let mp = evaluate(&MaxPower, &test, 64).unwrap().mean;
    let pass = tgt >= 0.99 * wm;
    report(
        7,
        "n=30 reduced-recipe TGT >= 0.99 x WMMSE",
        pass,
        &format!(
            "TGT {tgt:.3}, WMMSE {wm:.3}, max power {mp:.3}, ratio {:.4}, best epoch {}",
            tgt / wm,
            outcome.best_epoch
        ),
    );
    assert!(pass);
}

/// A reduced n = 50 model (50 topologies x 20 fades, 20 epochs) on a field
/// four times narrower than in training.
#[test]
fn c08_dense_field_failure_mode_is_preserved() {
    let _g = serial();
    let cfg = desk();
    let train_spec = DatasetSpec {
        n_list: vec![50],
        topologies: 50,
        ..experiments::training_spec(&cfg)
    };
    let train_cfg = TrainConfig { epochs: 20, ..cfg.train.clone() };
    let model = train(&train_cfg, &cfg.model, &gen_dataset(&train_spec).unwrap()).unwrap().best;
    let dense = ChannelParams {
        half_width: Some(12.5),
        ..cfg.channel.clone()
    };
    let spec = DatasetSpec {
        topologies: 20,
        fades_per_topology: 25,
        ..eval_spec(&cfg, 50, dense, "table4")
    };
    let test = gen_dataset(&spec).unwrap();
    let tgt = evaluate(&model, &test, 64).unwrap().mean;
    let wm = evaluate(&wmmse_policy(&cfg), &test, 64).unwrap().mean;
    let pass = tgt < wm;
    report(8, "half-width 12: TGT below WMMSE", pass, &format!("TGT {tgt:.3}, WMMSE {wm:.3}"));
    assert!(pass);
}

#[test]
fn c09_rerun_from_manifest_is_bitwise_identical() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = BenchConfig::default();
    cfg.data.n_list = vec![10];
    cfg.data.topologies = 12;
    cfg.data.fades_per_topology = 4;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    cfg.eval.topologies = 5;
    cfg.eval.fades_per_topology = 4;
    cfg.sweeps.homophily_n = 20;
    cfg.sweeps.homophily_instances = 10;

    let mut trained = experiments::run("train", &cfg).unwrap();
    trained.write(dir.path().join("train")).unwrap();
    let ckpt = dir.path().join("train/model.ckpt");
    let mut eval_cfg = cfg.clone();
    eval_cfg.models.insert(experiments::EVAL_ROLE.into(), ckpt);
    let mut evaluated = experiments::run("eval", &eval_cfg).unwrap();
    evaluated.write(dir.path().join("eval")).unwrap();
    let mut homophily = experiments::run("table1", &cfg).unwrap();
    homophily.write(dir.path().join("table1")).unwrap();

    let mut mismatched = Vec::new();
    let mut compared = 0;
    for name in ["train", "eval", "table1"] {
        let manifest = Manifest::load(dir.path().join(name).join("manifest.json")).unwrap();
        let (_, bad) = experiments::rerun(&manifest).unwrap();
        compared += manifest.outputs.len();
        mismatched.extend(bad.into_iter().map(|f| format!("{name}/{f}")));
    }
    let pass = mismatched.is_empty() && compared > 0;
    report(9, "rerun from manifest reproduces every output", pass, &format!("{compared} files compared, mismatches {mismatched:?}"));
    assert!(pass);
}

#[test]
fn c10_forward_time_grows_quadratically() {
    let _g = serial();
    let mut cfg = BenchConfig::default();
    cfg.sweeps.complexity_sizes = vec![64, 128];
    cfg.sweeps.complexity_repeats = 7;
    let probe = complexity_probe(&cfg).unwrap();
    let ratio = probe.ratios[0];
    let pass = (3.0..=6.0).contains(&ratio);
    report(
        10,
        "forward time ratio T(128)/T(64) in [3, 6]",
        pass,
        &format!("{:.2} ms -> {:.2} ms, ratio {ratio:.2}", probe.seconds[0] * 1e3, probe.seconds[1] * 1e3),
    );
    assert!(pass);
}
