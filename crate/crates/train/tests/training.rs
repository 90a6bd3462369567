use d2d_autodiff::{grad_check, NormMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use d2d_core::{gen_dataset, max_power, weighted_sum_rate, ChannelParams, DatasetSpec};
use d2d_tgt::{encode_graph, forward_on_tape, TgtConfig, TgtParams};
use d2d_train::{
    evaluate, model_card, sum_rate_loss, train, write_history_csv, write_per_instance_csv, MaxPower, PowerPolicy,
    TrainConfig,
};

fn tiny_model() -> TgtConfig {
    TgtConfig { d: 8, heads: 4, ..TgtConfig::default() }
}

fn dataset(n: usize, topologies: usize, fades: usize, seed: u64) -> d2d_core::Dataset {
    gen_dataset(&DatasetSpec::single(n, topologies, fades, seed)).unwrap()
}

#[test]
fn loss_gradients_match_finite_differences() {
    let cfg = TgtConfig::default();
    // At initialization every LayerNorm gain is 1, so the summed output of
    // the last layer equals the sum of its bias and all lower gradients
    // vanish. Perturb to get a generic point.
    let mut params = TgtParams::init(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    let ds = dataset(4, 1, 1, 3);
    let inst = ds.instances[0].clone();
    let enc = encode_graph(&inst, cfg.features).unwrap();
    let report = grad_check(params.tensors(), 1e-5, |tape, vars| {
        let pass = forward_on_tape(tape, &params, vars, &[&enc], NormMode::Eval).expect("forward");
        Ok(sum_rate_loss(tape, pass.power, &[&inst]).expect("loss"))
    })
    .unwrap();
    for t in &report.tensors {
        assert!(t.rel_error < 1e-4, "{}: {t:?}", params.names()[t.index]);
    }
    let expected = -weighted_sum_rate(&inst, &d2d_tgt::forward(&inst, &params).unwrap().p).unwrap();
    assert!((report.loss - expected).abs() < 1e-12);
}

#[test]
fn max_power_through_policy_path() {
    let ds = dataset(6, 5, 4, 9);
    let summary = evaluate(&MaxPower, &ds, 7).unwrap();
    for (inst, v) in ds.instances.iter().zip(&summary.per_instance) {
        assert_eq!(*v, weighted_sum_rate(inst, &max_power(inst).p).unwrap());
    }
}

#[test]
fn eval_is_batch_size_invariant() {
    let ds = dataset(5, 4, 3, 2);
    let params = TgtParams::init(&tiny_model(), 2).unwrap();
    let a = evaluate(&params, &ds, 1).unwrap();
    let b = evaluate(&params, &ds, 5).unwrap();
    let c = evaluate(&params, &ds, 64).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    for (inst, v) in ds.instances.iter().zip(&a.per_instance) {
        let single = params.allocate(&[inst]).unwrap().pop().unwrap();
        assert_eq!(*v, weighted_sum_rate(inst, &single).unwrap());
    }
}

#[test]
fn empty_dataset_rejected() {
    let empty = d2d_core::Dataset::empty(0);
    assert!(evaluate(&MaxPower, &empty, 4).is_err());
    assert!(train(&TrainConfig::default(), &tiny_model(), &empty).is_err());
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let ds = dataset(4, 4, 3, 5);
    let cfg = TrainConfig { epochs: 3, lr: 0.0, weight_decay: 0.0, batch_size: 4, seed: 5, ..TrainConfig::default() };
    let out = train(&cfg, &tiny_model(), &ds).unwrap();
    assert_eq!(out.last.tensors(), TgtParams::init(&tiny_model(), 5).unwrap().tensors());
}

#[test]
fn reruns_are_bitwise_identical() {
    let ds = dataset(5, 6, 4, 8);
    let cfg = TrainConfig { epochs: 3, batch_size: 5, seed: 8, ..TrainConfig::default() };
    let a = train(&cfg, &tiny_model(), &ds).unwrap();
    let b = train(&cfg, &tiny_model(), &ds).unwrap();
    assert_eq!(a.best.to_checkpoint(8, 0).to_bytes(), b.best.to_checkpoint(8, 0).to_bytes());
    assert_eq!(a.last, b.last);
    assert_eq!(
        a.history.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>(),
        b.history.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn one_epoch_decreases_loss_or_warns() {
    let ds = dataset(6, 10, 1, 4);
    let cfg = TrainConfig { epochs: 1, batch_size: 2, lr: 5e-3, val_fraction: 0.0, seed: 4, ..TrainConfig::default() };
    let out = train(&cfg, &tiny_model(), &ds).unwrap();
    let initial = {
        let params = TgtParams::init(&tiny_model(), 4).unwrap();
        -evaluate(&params, &ds, 64).unwrap().mean
    };
    let trained = -evaluate(&out.last, &ds, 64).unwrap().mean;
    assert!(trained < initial || !out.warnings.is_empty(), "{initial} -> {trained}");
}

#[test]
fn training_improves_over_initialization() {
    let ds = dataset(8, 20, 5, 6);
    let cfg = TrainConfig { epochs: 8, batch_size: 8, lr: 2e-3, seed: 6, ..TrainConfig::default() };
    let out = train(&cfg, &tiny_model(), &ds).unwrap();
    let before = evaluate(&TgtParams::init(&tiny_model(), 6).unwrap(), &ds, 64).unwrap().mean;
    let after = evaluate(&out.best, &ds, 64).unwrap().mean;
    assert!(after > before, "{before} -> {after}");
    assert!(out.history.iter().all(|r| r.val_sum_rate.is_finite()));
    assert!(out.best_epoch < 8);
}

#[test]
fn validation_split_is_disjoint() {
    let ds = dataset(5, 20, 3, 1);
    let (train_set, val_set) = ds.split_topologies(TrainConfig::default().val_fraction);
    assert_eq!(val_set.topology_count(), 1);
    assert!(train_set.is_disjoint_from(&val_set));
}

#[test]
fn artifacts_are_written() {
    let ds = dataset(4, 4, 2, 3);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 3, ..TrainConfig::default() };
    let out = train(&cfg, &tiny_model(), &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_history_csv(dir.path().join("history.csv"), &out.history).unwrap();
    let text = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(text.starts_with("epoch,loss,val_sum_rate\n"));
    assert_eq!(text.lines().count(), 3);
    let summary = evaluate(&out.best, &ds, 8).unwrap();
    write_per_instance_csv(dir.path().join("eval.csv"), &ds, &summary).unwrap();
    let rows = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(rows.lines().count(), ds.len() + 1);
    let card = model_card(&tiny_model(), &cfg, &out, &ds.content_hash());
    assert!(card.contains(&ds.content_hash()));
    assert!(card.contains("seed: 3"));
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { lr: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { val_fraction: 1.0, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    let _ = ChannelParams::default();
}
