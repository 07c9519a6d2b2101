//! Train a Historical Fusion gate on held-out train days and route each
//! prediction between the model and the historical candidate.
//!
//! Run: cargo run --example fusion_gate

use std::collections::BTreeMap;
use std::io::Cursor;

use mobility::features::{earliest_local_date, enrich, temporal_split};
use mobility::fusion::{
    fused_predict, gate_examples, train_gate, GATE_EPOCHS, GATE_LR,
};
use mobility::grid::build_grid;
use mobility::harness::testdata::synthetic_tsv;
use mobility::ingest::{build_trajectories, parse_checkins, ColumnSchema};
use mobility::metrics::accuracy;
use mobility::model::{
    build_windows, train, Arch, CandidateSource, FeatureEncoder, ModelConfig, TargetTime, Vocab,
};
use mobility::sampling::plan_sequential;

fn main() -> anyhow::Result<()> {
    let outcome = parse_checkins(
        Cursor::new(synthetic_tsv(4, 300)),
        &ColumnSchema::foursquare_tsv(),
    )?;
    let trajectories = build_trajectories(&outcome.checkins);
    let points: Vec<(f64, f64)> = trajectories
        .iter()
        .flat_map(|t| t.points.iter().map(|p| (p.lat, p.lon)))
        .collect();
    let spec = build_grid(&points, 8, 8)?;
    let day0 = earliest_local_date(&trajectories).expect("non-empty corpus");
    let enriched: Vec<_> = trajectories.iter().map(|t| enrich(t, &spec, day0)).collect();
    let split = temporal_split(&enriched, 250, 300);

    let vocab = Vocab::from_train(&spec, &split.train);
    let fenc = FeatureEncoder::fit(&split.train);
    let mut config = ModelConfig::tiny(Arch::Lstm);
    config.window_len = 16;
    config.stride = 8;
    config.epochs = 1;
    config.batch_size = 8;
    let windows = build_windows(&split.train, config.window_len, config.stride);
    let schedule = plan_sequential(&windows.sample_refs(), config.batch_size, config.epochs)?;
    let outcome = train(config, &split.train, &windows, &schedule, &fenc, &vocab, None)?;

    // gate supervision comes from the tail of each user's train days
    let mut examples = Vec::new();
    for t in &split.train {
        examples.extend(gate_examples(&outcome.net, &t.points, None, &fenc, &spec));
    }
    let input_dim = 2 * outcome.net.config.d_model;
    let (gate, gate_losses) = train_gate(&examples, input_dim, GATE_LR, GATE_EPOCHS);
    println!(
        "gate trained on {} examples; bce {:.4} -> {:.4}",
        examples.len(),
        gate_losses.first().copied().unwrap_or(f64::NAN),
        gate_losses.last().copied().unwrap_or(f64::NAN)
    );

    let train_by_user: BTreeMap<u64, _> = split.train.iter().map(|t| (t.user_id, t)).collect();
    for t in &split.test {
        let Some(hist) = train_by_user.get(&t.user_id) else { continue };
        let targets: Vec<TargetTime> = t.points.iter().map(TargetTime::of_point).collect();
        let preds = fused_predict(&outcome.net, &gate, &hist.points, &targets, None, &fenc, &spec);
        let routed_model = preds
            .iter()
            .filter(|p| p.source == CandidateSource::Model)
            .count();
        let pred_cells: Vec<_> = preds.iter().map(|p| p.cell).collect();
        let true_cells: Vec<_> = t.points.iter().map(|p| p.cell).collect();
        println!(
            "user {}: accuracy {:.3}, {}/{} routed to model",
            t.user_id,
            accuracy(&pred_cells, &true_cells)?,
            routed_model,
            preds.len()
        );
    }
    Ok(())
}
