//! End-to-end training of a tiny LSTM on a synthetic commuter corpus:
//! ingest, grid, enrich, split, window, schedule, train, predict, score.
//!
//! Run: cargo run --example train_tiny_model

use std::collections::BTreeMap;
use std::io::Cursor;

use mobility::features::{earliest_local_date, enrich, temporal_split};
use mobility::grid::build_grid;
use mobility::harness::testdata::synthetic_tsv;
use mobility::ingest::{build_trajectories, parse_checkins, ColumnSchema};
use mobility::metrics::{accuracy, geo_bleu, GeoBleuParams};
use mobility::model::{
    build_windows, predict_sequence, train, Arch, FeatureEncoder, ModelConfig, TargetTime, Vocab,
};
use mobility::sampling::plan_stratified;
use mobility::semantics::Clustering;

fn main() -> anyhow::Result<()> {
    let outcome = parse_checkins(
        Cursor::new(synthetic_tsv(6, 300)),
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

    // one cluster containing everyone; stratified degenerates to a shuffle
    let clustering = Clustering {
        k: 1,
        assignments: windows.user_order.iter().map(|&u| (u, 0)).collect(),
        centers: vec![(0.0, 0.0)],
        silhouette: None,
        degenerate: true,
    };
    let schedule = plan_stratified(
        &windows.sample_refs(),
        &clustering,
        config.batch_size,
        config.epochs,
        config.seed,
    )?;

    let outcome = train(config, &split.train, &windows, &schedule, &fenc, &vocab, None)?;
    println!(
        "trained {} steps; loss {:.4} -> {:.4}",
        outcome.loss_curve.len(),
        outcome.loss_curve.first().unwrap(),
        outcome.loss_curve.last().unwrap()
    );

    // score each user's test days autoregressively
    let train_by_user: BTreeMap<u64, _> = split.train.iter().map(|t| (t.user_id, t)).collect();
    let params = GeoBleuParams::default();
    for t in split.test.iter().take(3) {
        let Some(hist) = train_by_user.get(&t.user_id) else { continue };
        let targets: Vec<TargetTime> = t.points.iter().map(TargetTime::of_point).collect();
        let preds = predict_sequence(&outcome.net, &hist.points, &targets, None, &fenc, &spec);
        let pred_cells: Vec<_> = preds.iter().map(|p| p.cell).collect();
        let true_cells: Vec<_> = t.points.iter().map(|p| p.cell).collect();
        let pred_coords: Vec<_> = preds.iter().map(|p| (p.lat, p.lon)).collect();
        let true_coords: Vec<_> = t.points.iter().map(|p| (p.lat, p.lon)).collect();
        println!(
            "user {}: accuracy {:.3}, geo-bleu {:.3} over {} test points",
            t.user_id,
            accuracy(&pred_cells, &true_cells)?,
            geo_bleu(&pred_coords, &true_coords, &params)?,
            t.points.len()
        );
    }
    Ok(())
}
