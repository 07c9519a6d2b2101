//! The three batch-construction strategies over a clustered corpus:
//! sequential, cluster-ordered, and stratified.
//!
//! Run: cargo run --example sampling_strategies

use std::collections::BTreeMap;

use mobility::sampling::{
    plan_cluster_ordered, plan_sequential, plan_stratified, SampleRef,
};
use mobility::semantics::Clustering;

fn main() -> anyhow::Result<()> {
    // 9 users in 3 clusters, 2 windows each.
    let assignments: BTreeMap<u64, usize> = (0..9).map(|u| (u, (u % 3) as usize)).collect();
    let clustering = Clustering {
        k: 3,
        assignments,
        centers: vec![(0.0, 0.0); 3],
        silhouette: Some(0.8),
        degenerate: false,
    };
    let samples: Vec<SampleRef> = (0..9)
        .flat_map(|u| (0..2).map(move |w| SampleRef { user_id: u, window: w }))
        .collect();

    let show = |name: &str, schedule: &mobility::sampling::BatchSchedule| {
        println!("-- {name} (batch_size {})", schedule.batch_size);
        for (b, batch) in schedule.epochs[0].iter().enumerate() {
            let desc: Vec<String> = batch
                .iter()
                .map(|s| format!("u{}w{}(c{})", s.user_id, s.window, clustering.assignments[&s.user_id]))
                .collect();
            println!("  batch {b}: {}", desc.join(" "));
        }
    };

    show("sequential", &plan_sequential(&samples, 6, 1)?);
    show("cluster-ordered", &plan_cluster_ordered(&samples, &clustering, 6, 1)?);
    let stratified = plan_stratified(&samples, &clustering, 6, 1, 42)?;
    show("stratified", &stratified);
    println!("\naudit lines (first 5):");
    for line in stratified.to_lines().lines().take(5) {
        println!("  {line}");
    }
    Ok(())
}
