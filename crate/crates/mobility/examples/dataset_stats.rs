//! Parse a check-in corpus and print dataset statistics (counts, activity
//! histograms, top categories, repeat check-in ratios).
//!
//! Run: cargo run --example dataset_stats

use std::io::Cursor;

use mobility::harness::testdata::synthetic_tsv;
use mobility::ingest::{build_trajectories, compute_rcr, dataset_stats, parse_checkins, ColumnSchema};

fn main() -> anyhow::Result<()> {
    let tsv = synthetic_tsv(8, 60);
    let outcome = parse_checkins(Cursor::new(tsv), &ColumnSchema::foursquare_tsv())?;
    println!(
        "parsed {} check-ins ({} malformed rows)",
        outcome.checkins.len(),
        outcome.row_errors.len()
    );

    let trajectories = build_trajectories(&outcome.checkins);
    let stats = dataset_stats(&trajectories, 5);
    println!("{}", serde_json::to_string_pretty(&stats)?);

    for t in trajectories.iter().take(3) {
        println!(
            "user {}: {} check-ins, RCR {:.3}",
            t.user_id,
            t.points.len(),
            compute_rcr(t)?
        );
    }
    Ok(())
}
