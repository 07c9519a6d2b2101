//! Run the full config-driven harness on a synthetic corpus: multi-seed
//! experiment, persisted artifacts, evaluation from checkpoints, and a
//! byte-exact replay.
//!
//! Run: cargo run --release --example full_experiment

use std::fs;

use mobility::harness::{evaluate, replay, run_experiment, seed_stats, testdata, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data.tsv");
    fs::write(&data, testdata::synthetic_tsv(8, 300))?;

    let config = ExperimentConfig {
        dataset: data.to_string_lossy().into_owned(),
        city: "synth".into(),
        out_dir: dir.path().join("out").to_string_lossy().into_owned(),
        rows: 8,
        cols: 8,
        model: "lstm".into(),
        strategy: "stratified".into(),
        fusion: true,
        d_model: 8,
        layers: 1,
        heads: 2,
        window_len: 16,
        stride: 16,
        lr: 0.01,
        epochs: 1,
        batch_size: 8,
        seeds: vec![7, 8],
        subsample: 1.0,
        k_min: 2,
        k_max: 3,
        embedding_dim: 8,
        latent_dim: 4,
        top_k_pois: 3,
        ae_epochs: 3,
        ..ExperimentConfig::default()
    };
    println!("config fingerprint: {}", config.fingerprint());

    let runs = run_experiment(&config)?;
    for run in &runs {
        println!(
            "seed {}: geo-bleu {:.4}, accuracy {:.4}, routed-to-model {:.2} ({})",
            run.summary.seed,
            run.summary.geo_bleu,
            run.summary.accuracy,
            run.summary.routed_model_frac.unwrap_or(f64::NAN),
            run.dir.display()
        );
    }
    let scores: Vec<f64> = runs.iter().map(|r| r.summary.geo_bleu).collect();
    let (mean, min, max) = seed_stats(&scores);
    println!("geo-bleu across seeds: mean {mean:.4} min {min:.4} max {max:.4}");

    // re-score the first run from its persisted checkpoint, no retraining
    let report = evaluate(&runs[0].dir)?;
    println!(
        "evaluate from checkpoint: geo-bleu {:.4} over {} user-days",
        report.geo_bleu,
        report.per_unit.len()
    );

    // rerun from run.json and compare artifacts byte-for-byte
    let outcome = replay(&runs[0].dir)?;
    println!(
        "replay: schedule match {:?}, report match {}",
        outcome.schedule_match, outcome.report_match
    );
    Ok(())
}
