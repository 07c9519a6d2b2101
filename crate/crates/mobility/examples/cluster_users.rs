//! Build user profiles (top PoIs, weighted centroid, semantic vector) and
//! cluster them with silhouette-selected K-means.
//!
//! Run: cargo run --example cluster_users

use std::io::Cursor;

use mobility::harness::testdata::synthetic_tsv;
use mobility::ingest::{build_trajectories, parse_checkins, ColumnSchema};
use mobility::semantics::{build_profiles, cluster_users, ClusterFeature, EmbeddingProvider};

fn main() -> anyhow::Result<()> {
    let outcome = parse_checkins(
        Cursor::new(synthetic_tsv(12, 60)),
        &ColumnSchema::foursquare_tsv(),
    )?;
    let trajectories = build_trajectories(&outcome.checkins);

    let provider = EmbeddingProvider::fallback(64, 42);
    let (mut profiles, _autoencoder) = build_profiles(&trajectories, 5, &provider, 16, 10, 42)?;
    println!("built {} profiles", profiles.len());
    for p in profiles.iter().take(3) {
        println!(
            "user {}: top PoI '{}' x{}, centroid ({:.3}, {:.3}), RCR {:.3}",
            p.user_id,
            p.top_pois[0].category_name,
            p.top_pois[0].visit_count,
            p.centroid.0,
            p.centroid.1,
            p.rcr
        );
    }

    let clustering = cluster_users(&mut profiles, 2..=5, 42, ClusterFeature::Centroid)?;
    println!(
        "selected K = {} (silhouette {:?})",
        clustering.k, clustering.silhouette
    );
    for (user, cluster) in clustering.assignments.iter().take(6) {
        println!("user {user} -> cluster {cluster}");
    }
    Ok(())
}
