//! The Historical Visits baseline: answer each test timestamp with the
//! nearest-in-time cell from the latest matching training day.
//!
//! Run: cargo run --example hv_baseline

use std::collections::BTreeMap;
use std::io::Cursor;

use mobility::features::{earliest_local_date, enrich, temporal_split};
use mobility::grid::build_grid;
use mobility::harness::testdata::synthetic_tsv;
use mobility::ingest::{build_trajectories, parse_checkins, ColumnSchema};
use mobility::metrics::accuracy;
use mobility::model::{hv_predict, TargetTime};

fn main() -> anyhow::Result<()> {
    let outcome = parse_checkins(
        Cursor::new(synthetic_tsv(10, 300)),
        &ColumnSchema::foursquare_tsv(),
    )?;
    let trajectories = build_trajectories(&outcome.checkins);
    let points: Vec<(f64, f64)> = trajectories
        .iter()
        .flat_map(|t| t.points.iter().map(|p| (p.lat, p.lon)))
        .collect();
    let spec = build_grid(&points, 40, 40)?;
    let day0 = earliest_local_date(&trajectories).expect("non-empty corpus");
    let enriched: Vec<_> = trajectories.iter().map(|t| enrich(t, &spec, day0)).collect();
    let split = temporal_split(&enriched, 250, 300);

    let train_by_user: BTreeMap<u64, _> = split.train.iter().map(|t| (t.user_id, t)).collect();
    let mut total_hits = 0usize;
    let mut total = 0usize;
    for t in &split.test {
        let Some(hist) = train_by_user.get(&t.user_id) else { continue };
        let targets: Vec<TargetTime> = t.points.iter().map(TargetTime::of_point).collect();
        let preds = hv_predict(&hist.points, &targets, &spec);
        let pred_cells: Vec<_> = preds.iter().map(|p| p.cell).collect();
        let true_cells: Vec<_> = t.points.iter().map(|p| p.cell).collect();
        let acc = accuracy(&pred_cells, &true_cells)?;
        total_hits += (acc * true_cells.len() as f64).round() as usize;
        total += true_cells.len();
        if t.user_id < 3 {
            println!("user {}: accuracy {:.3} over {} points", t.user_id, acc, true_cells.len());
        }
    }
    println!("overall: {total_hits}/{total} exact cells");
    Ok(())
}
