use std::path::{Path, PathBuf};
use std::process::Command;

use d2d_bench::{BenchConfig, Manifest};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_d2d-bench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn shipped_configs_parse() {
    for name in ["full.toml", "desk.toml"] {
        let cfg = BenchConfig::load(repo_root().join("configs").join(name)).unwrap();
        assert!(cfg.model.validate().is_ok(), "{name}");
        assert!(cfg.train.validate().is_ok(), "{name}");
    }
    let full = BenchConfig::load(repo_root().join("configs/full.toml")).unwrap();
    let defaults = BenchConfig { models: full.models.clone(), ..BenchConfig::default() };
    assert_eq!(full, defaults);
}

#[test]
fn table2_reports_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["table2", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));
}

#[test]
fn train_eval_and_rerun_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg_path,
        "[data]\nn_list = [6]\ntopologies = 6\nfades_per_topology = 3\n\
         [train]\nepochs = 2\nbatch_size = 4\n\
         [eval]\ntopologies = 3\nfades_per_topology = 2\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let run_dir = dir.path().join("train");
    let ckpt = dir.path().join("m.ckpt");
    let out = bench(&["train", "--config", cfg, "--seed", "5", "--out", run_dir.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    let eval_dir = dir.path().join("eval");
    let out = bench(&["eval", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", eval_dir.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = Manifest::load(eval_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.seed, 2024);
    assert!(manifest.checkpoints.contains_key("eval"));
    let csv = std::fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let rerun_dir = dir.path().join("rerun");
    let out = bench(&["rerun", run_dir.join("manifest.json").to_str().unwrap(), "--out", rerun_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(run_dir.join("model.ckpt")).unwrap(),
        std::fs::read(rerun_dir.join("model.ckpt")).unwrap()
    );
}
