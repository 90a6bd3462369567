use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use d2d_bench::experiments::{self, EVAL_ROLE};
use d2d_bench::{BenchConfig, Manifest, Report};

#[derive(Parser)]
#[command(name = "d2d-bench", version, about = "Power-control experiments: baselines, TGT training, tables and figures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; also seeds training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Model checkpoint: read by `eval`, copied to this path by `train`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Network sizes for `gen-data`, `train` and `eval`, e.g. `20,30,40,50`.
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and save the training set.
    GenData,
    /// Train a model on freshly generated data.
    Train,
    /// Evaluate a checkpoint against max power and WMMSE.
    Eval,
    /// Homophily of WMMSE allocations across noise powers.
    Table1,
    /// Sum-rate per method and network size.
    Table2,
    /// Fading-scale generalization.
    Table3,
    /// Field-size generalization.
    Table4,
    /// Per-instance sum-rate histogram on a fixed topology.
    Fig2,
    /// Size generalization normalized by WMMSE.
    Fig3,
    /// Sum-rate against parameter count, plus forward timing.
    Fig4,
    /// Size generalization of the width-study models.
    Fig5,
    /// Finite-difference check of the training gradients.
    Gradcheck,
    /// Rerun the experiment recorded in a manifest and compare outputs.
    Rerun { manifest: PathBuf },
    /// Print the effective configuration as TOML.
    Config,
}

impl Command {
    fn experiment(&self) -> Option<&'static str> {
        Some(match self {
            Self::GenData => "gen-data",
            Self::Train => "train",
            Self::Eval => "eval",
            Self::Table1 => "table1",
            Self::Table2 => "table2",
            Self::Table3 => "table3",
            Self::Table4 => "table4",
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Fig5 => "fig5",
            Self::Gradcheck => "gradcheck",
            Self::Rerun { .. } | Self::Config => return None,
        })
    }
}

fn effective_config(common: &Common, command: &Command) -> anyhow::Result<BenchConfig> {
    let mut cfg = match &common.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(sizes) = &common.sizes {
        cfg.data.n_list = sizes.clone();
    }
    if let (Command::Eval, Some(path)) = (command, &common.checkpoint) {
        cfg.models.insert(EVAL_ROLE.into(), path.clone());
    }
    Ok(cfg)
}

fn print_tables(report: &Report) {
    for (name, table) in &report.tables {
        if table.rows.len() > 40 {
            println!("{name}: {} rows", table.rows.len());
            continue;
        }
        println!("{name}");
        println!("  {}", table.columns.join("\t"));
        for row in &table.rows {
            println!("  {}", row.join("\t"));
        }
    }
}

fn write_report(report: &mut Report, out: &Path) -> anyhow::Result<()> {
    let manifest = report.write(out)?;
    print_tables(report);
    println!("wrote {} files and {}", report.files.len() + report.timing.len(), manifest.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let common = &cli.common;
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match &cli.command {
        Command::Config => {
            print!("{}", effective_config(common, &cli.command)?.to_toml());
        }
        Command::Rerun { manifest } => {
            let recorded = Manifest::load(manifest)?;
            let (mut report, mismatches) = experiments::rerun(&recorded)?;
            write_report(&mut report, &common.out)?;
            if !mismatches.is_empty() {
                anyhow::bail!("outputs differ from the manifest: {}", mismatches.join(", "));
            }
            println!("all {} outputs match {}", recorded.outputs.len(), manifest.display());
        }
        Command::Gradcheck => {
            let cfg = effective_config(common, &cli.command)?;
            let (mut report, check) = experiments::gradcheck(&cfg)?;
            write_report(&mut report, &common.out)?;
            let worst = check.max_rel_error();
            println!("max relative error {worst:.3e} ({})", if check.passes(1e-4) { "ok" } else { "above 1e-4" });
        }
        command => {
            let cfg = effective_config(common, command)?;
            let name = command.experiment().expect("experiment command");
            let mut report = experiments::run(name, &cfg)?;
            write_report(&mut report, &common.out)?;
            if let (Command::Train, Some(path)) = (command, &common.checkpoint) {
                std::fs::write(path, &report.files["model.ckpt"])
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("checkpoint copied to {}", path.display());
            }
        }
    }
    Ok(())
}
