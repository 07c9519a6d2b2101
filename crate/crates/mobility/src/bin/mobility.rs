//! Experiment harness CLI: dataset stats, clustering, training runs,
//! checkpoint evaluation, sweeps, and schedule replay.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mobility::harness::{
    build_semantics, evaluate, replay, run_experiment, run_sweep, stats, ExperimentConfig,
    SweepAxis,
};

#[derive(Parser)]
#[command(name = "mobility", version, about = "Long-horizon mobility prediction harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags overriding keys of the TOML config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Config file (TOML, key = value). Flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// "tsv" or "csv"
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    city: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// "hv", "lstm", or "transformer"
    #[arg(long)]
    model: Option<String>,
    /// "sequential", "cluster-ordered", or "stratified"
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated seed list
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Fraction of users kept (desk-scale control)
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    ext_spatiotemporal: Option<bool>,
    #[arg(long)]
    user_semantic: Option<bool>,
    #[arg(long)]
    fusion: Option<bool>,
}

impl Overrides {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        apply!(
            dataset, format, city, out_dir, rows, cols, model, strategy, batch_size, epochs,
            lr, seeds, subsample, ext_spatiotemporal, user_semantic, fusion
        );
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Dataset analysis: counts, histograms, top categories, per-user RCR.
    Stats {
        #[command(flatten)]
        overrides: Overrides,
        /// How many top categories to report.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Build user profiles and the silhouette-selected clustering.
    Cluster {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full experiment: train (unless model = hv), predict, evaluate.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-score a persisted run directory from its checkpoint.
    Eval {
        /// A seed_<n> run directory produced by `train` or `sweep`.
        run_dir: PathBuf,
    },
    /// Sweep one axis over the base config.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// "batch_size", "sampling", or "ablation".
        #[arg(long)]
        axis: String,
        /// Batch sizes for the batch_size axis, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "4,16,64,256")]
        batch_sizes: Vec<usize>,
    },
    /// Re-execute a persisted run and verify its artifacts byte-for-byte.
    Replay {
        run_dir: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Stats { overrides, top } => {
            let config = overrides.into_config()?;
            config.validate()?;
            print_json(&stats(&config, top)?)?;
        }
        Cmd::Cluster { overrides } => {
            let config = overrides.into_config()?;
            config.validate()?;
            let seed = config.seeds[0];
            let prepared = mobility::harness::prepare(&config, seed)?;
            let semantics = build_semantics(&config, &prepared.raw_train, seed)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = PathBuf::from(&config.out_dir).join("clustering.json");
            std::fs::write(&path, serde_json::to_string_pretty(&semantics.clustering)?)?;
            eprintln!("wrote {}", path.display());
            print_json(&semantics.clustering)?;
        }
        Cmd::Train { overrides } => {
            let config = overrides.into_config()?;
            let runs = run_experiment(&config)?;
            for run in &runs {
                print_json(&run.summary)?;
            }
        }
        Cmd::Eval { run_dir } => {
            print_json(&evaluate(&run_dir)?)?;
        }
        Cmd::Sweep {
            overrides,
            axis,
            batch_sizes,
        } => {
            let config = overrides.into_config()?;
            let axis = match axis.as_str() {
                "batch_size" => SweepAxis::BatchSize(batch_sizes),
                "sampling" => SweepAxis::Sampling,
                "ablation" => SweepAxis::Ablation,
                other => bail!("unknown sweep axis '{other}'"),
            };
            let rows = run_sweep(&config, &axis)?;
            print_json(&rows)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                bail!("{failed} sweep cell(s) failed; see sweep.csv");
            }
        }
        Cmd::Replay { run_dir } => {
            let outcome = replay(&run_dir)?;
            print_json(&outcome)?;
            if outcome.schedule_match == Some(false) || !outcome.report_match {
                bail!("replay mismatch");
            }
        }
    }
    Ok(())
}
