//! Per-epoch batch schedules under the three sampling strategies, making
//! the non-IID structure of the training data controllable.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semantics::Clustering;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("batch_size must be >= 1")]
    BadBatchSize,
    #[error("user {0} has no cluster assignment")]
    UnassignedUser(u64),
    #[error("bad schedule line {line}: {msg}")]
    BadScheduleLine { line: usize, msg: String },
}

/// One training window: a (user, window index) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub user_id: u64,
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Sequential,
    ClusterOrdered,
    Stratified,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Sequential => "sequential",
            Strategy::ClusterOrdered => "cluster-ordered",
            Strategy::Stratified => "stratified",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequential" => Ok(Strategy::Sequential),
            "cluster-ordered" | "cluster_ordered" | "cluster" => Ok(Strategy::ClusterOrdered),
            "stratified" => Ok(Strategy::Stratified),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub strategy: Strategy,
    pub batch_size: usize,
    /// epochs -> batches -> sample references.
    pub epochs: Vec<Vec<Vec<SampleRef>>>,
}

impl BatchSchedule {
    /// Compact audit format: one "epoch,batch,user,window" line per sample.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (e, epoch) in self.epochs.iter().enumerate() {
            for (b, batch) in epoch.iter().enumerate() {
                for s in batch {
                    out.push_str(&format!("{e},{b},{},{}\n", s.user_id, s.window));
                }
            }
        }
        out
    }

    pub fn from_lines(
        text: &str,
        strategy: Strategy,
        batch_size: usize,
    ) -> Result<Self, SamplingError> {
        let mut epochs: Vec<Vec<Vec<SampleRef>>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(SamplingError::BadScheduleLine {
                    line: i + 1,
                    msg: "expected 4 comma-separated fields".into(),
                });
            }
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| SamplingError::BadScheduleLine {
                    line: i + 1,
                    msg: e.to_string(),
                })
            };
            let (e, b) = (parse(parts[0])?, parse(parts[1])?);
            let user_id = parts[2]
                .parse::<u64>()
                .map_err(|err| SamplingError::BadScheduleLine {
                    line: i + 1,
                    msg: err.to_string(),
                })?;
            let window = parse(parts[3])?;
            while epochs.len() <= e {
                epochs.push(Vec::new());
            }
            while epochs[e].len() <= b {
                epochs[e].push(Vec::new());
            }
            epochs[e][b].push(SampleRef { user_id, window });
        }
        Ok(BatchSchedule {
            strategy,
            batch_size,
            epochs,
        })
    }
}

fn slice_into_batches(samples: &[SampleRef], batch_size: usize) -> Vec<Vec<SampleRef>> {
    samples.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Contiguous slices in original dataset order, identical across epochs.
pub fn plan_sequential(
    samples: &[SampleRef],
    batch_size: usize,
    epochs: usize,
) -> Result<BatchSchedule, SamplingError> {
    if batch_size < 1 {
        return Err(SamplingError::BadBatchSize);
    }
    let batches = slice_into_batches(samples, batch_size);
    Ok(BatchSchedule {
        strategy: Strategy::Sequential,
        batch_size,
        epochs: vec![batches; epochs],
    })
}

/// Samples sorted by (cluster, user, window) and sliced; epoch-constant to
/// concentrate similar users per batch.
pub fn plan_cluster_ordered(
    samples: &[SampleRef],
    clustering: &Clustering,
    batch_size: usize,
    epochs: usize,
) -> Result<BatchSchedule, SamplingError> {
    if batch_size < 1 {
        return Err(SamplingError::BadBatchSize);
    }
    let mut keyed: Vec<(usize, SampleRef)> = Vec::with_capacity(samples.len());
    for &s in samples {
        let cluster = *clustering
            .assignments
            .get(&s.user_id)
            .ok_or(SamplingError::UnassignedUser(s.user_id))?;
        keyed.push((cluster, s));
    }
    keyed.sort_by_key(|&(cluster, s)| (cluster, s.user_id, s.window));
    let sorted: Vec<SampleRef> = keyed.into_iter().map(|(_, s)| s).collect();
    let batches = slice_into_batches(&sorted, batch_size);
    Ok(BatchSchedule {
        strategy: Strategy::ClusterOrdered,
        batch_size,
        epochs: vec![batches; epochs],
    })
}

/// Every batch draws per-cluster quotas proportional to each cluster's share
/// of the remaining samples (largest-remainder rounding). Within-cluster
/// order reshuffles each epoch under the seed.
pub fn plan_stratified(
    samples: &[SampleRef],
    clustering: &Clustering,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<BatchSchedule, SamplingError> {
    if batch_size < 1 {
        return Err(SamplingError::BadBatchSize);
    }
    let mut by_cluster: BTreeMap<usize, Vec<SampleRef>> = BTreeMap::new();
    for &s in samples {
        let cluster = *clustering
            .assignments
            .get(&s.user_id)
            .ok_or(SamplingError::UnassignedUser(s.user_id))?;
        by_cluster.entry(cluster).or_default().push(s);
    }

    let mut epoch_batches = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut queues: BTreeMap<usize, std::collections::VecDeque<SampleRef>> = BTreeMap::new();
        for (&cluster, members) in &by_cluster {
            let mut shuffled = members.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cluster as u64,
            );
            shuffled.shuffle(&mut rng);
            queues.insert(cluster, shuffled.into());
        }

        let mut batches = Vec::new();
        loop {
            let remaining_total: usize = queues.values().map(|q| q.len()).sum();
            if remaining_total == 0 {
                break;
            }
            let take = batch_size.min(remaining_total);
            let quotas = largest_remainder_quotas(&queues, take);
            let mut batch = Vec::with_capacity(take);
            for (&cluster, &quota) in &quotas {
                let q = queues.get_mut(&cluster).unwrap();
                for _ in 0..quota {
                    batch.push(q.pop_front().unwrap());
                }
            }
            batches.push(batch);
        }
        epoch_batches.push(batches);
    }

    Ok(BatchSchedule {
        strategy: Strategy::Stratified,
        batch_size,
        epochs: epoch_batches,
    })
}

/// Floor the exact proportional quota per cluster, then hand out the
/// leftover seats by descending fractional remainder.
fn largest_remainder_quotas(
    queues: &BTreeMap<usize, std::collections::VecDeque<SampleRef>>,
    take: usize,
) -> BTreeMap<usize, usize> {
    let total: usize = queues.values().map(|q| q.len()).sum();
    let mut quotas: BTreeMap<usize, usize> = BTreeMap::new();
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0usize;
    for (&cluster, q) in queues {
        if q.is_empty() {
            continue;
        }
        let exact = take as f64 * q.len() as f64 / total as f64;
        let floor = exact.floor() as usize;
        let capped = floor.min(q.len());
        quotas.insert(cluster, capped);
        assigned += capped;
        remainders.push((exact - floor as f64, cluster));
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut idx = 0;
    while assigned < take {
        let (_, cluster) = remainders[idx % remainders.len()];
        let room = queues[&cluster].len() - quotas.get(&cluster).copied().unwrap_or(0);
        if room > 0 {
            *quotas.entry(cluster).or_insert(0) += 1;
            assigned += 1;
        }
        idx += 1;
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap as Map;

    fn samples(n: usize) -> Vec<SampleRef> {
        (0..n)
            .map(|i| SampleRef {
                user_id: i as u64,
                window: 0,
            })
            .collect()
    }

    fn clustering_of(assignments: &[(u64, usize)]) -> Clustering {
        Clustering {
            k: assignments.iter().map(|&(_, c)| c + 1).max().unwrap_or(1),
            assignments: assignments.iter().cloned().collect(),
            centers: vec![],
            silhouette: None,
            degenerate: false,
        }
    }

    #[test]
    fn sequential_batch_sizes() {
        let s = plan_sequential(&samples(10), 4, 2).unwrap();
        let sizes: Vec<usize> = s.epochs[0].iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(s.epochs[0], s.epochs[1]);
    }

    #[test]
    fn sequential_singleton() {
        let s = plan_sequential(&samples(1), 4, 1).unwrap();
        assert_eq!(s.epochs[0].len(), 1);
        assert_eq!(s.epochs[0][0].len(), 1);
    }

    #[test]
    fn sequential_preserves_input_order() {
        let input = samples(100);
        let s = plan_sequential(&input, 7, 1).unwrap();
        let flat: Vec<SampleRef> = s.epochs[0].iter().flatten().cloned().collect();
        assert_eq!(flat, input);
    }

    #[test]
    fn bad_batch_size_rejected() {
        assert!(plan_sequential(&samples(3), 0, 1).is_err());
    }

    #[test]
    fn cluster_ordered_concentrates_clusters() {
        let assignments: Vec<(u64, usize)> = (0..8).map(|u| (u, (u % 2) as usize)).collect();
        let clustering = clustering_of(&assignments);
        let s = plan_cluster_ordered(&samples(8), &clustering, 4, 1).unwrap();
        let batch_clusters: Vec<Vec<usize>> = s.epochs[0]
            .iter()
            .map(|b| b.iter().map(|x| clustering.assignments[&x.user_id]).collect())
            .collect();
        assert_eq!(batch_clusters[0], vec![0, 0, 0, 0]);
        assert_eq!(batch_clusters[1], vec![1, 1, 1, 1]);
    }

    #[test]
    fn cluster_ordered_single_cluster_is_user_sequential() {
        let assignments: Vec<(u64, usize)> = (0..6).map(|u| (u, 0)).collect();
        let s = plan_cluster_ordered(&samples(6), &clustering_of(&assignments), 2, 1).unwrap();
        let flat: Vec<u64> = s.epochs[0].iter().flatten().map(|x| x.user_id).collect();
        assert_eq!(flat, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn cluster_ordered_unassigned_user_errors() {
        let s = plan_cluster_ordered(&samples(3), &clustering_of(&[(0, 0)]), 2, 1);
        assert!(matches!(s, Err(SamplingError::UnassignedUser(_))));
    }

    #[test]
    fn cluster_purity_one_when_sizes_divide() {
        let assignments: Vec<(u64, usize)> = (0..24).map(|u| (u, (u / 8) as usize)).collect();
        let clustering = clustering_of(&assignments);
        let s = plan_cluster_ordered(&samples(24), &clustering, 4, 1).unwrap();
        // counting oracle: each batch must be single-cluster
        for batch in &s.epochs[0] {
            let mut counts: Map<usize, usize> = Map::new();
            for x in batch {
                *counts.entry(clustering.assignments[&x.user_id]).or_insert(0) += 1;
            }
            let purity = *counts.values().max().unwrap() as f64 / batch.len() as f64;
            assert_eq!(purity, 1.0);
        }
    }

    #[test]
    fn stratified_exact_proportional_quotas() {
        // clusters of 60/40, batch 10 -> every full batch is 6 + 4
        let assignments: Vec<(u64, usize)> =
            (0..100).map(|u| (u, usize::from(u >= 60))).collect();
        let clustering = clustering_of(&assignments);
        let s = plan_stratified(&samples(100), &clustering, 10, 1, 42).unwrap();
        for batch in &s.epochs[0] {
            let c0 = batch
                .iter()
                .filter(|x| clustering.assignments[&x.user_id] == 0)
                .count();
            assert_eq!(batch.len(), 10);
            assert_eq!(c0, 6, "batch {:?}", batch);
        }
    }

    #[test]
    fn stratified_single_cluster_is_shuffle() {
        let assignments: Vec<(u64, usize)> = (0..20).map(|u| (u, 0)).collect();
        let s = plan_stratified(&samples(20), &clustering_of(&assignments), 5, 1, 3).unwrap();
        let mut flat: Vec<u64> = s.epochs[0].iter().flatten().map(|x| x.user_id).collect();
        assert_ne!(flat, (0..20).collect::<Vec<u64>>(), "expected a shuffle");
        flat.sort_unstable();
        assert_eq!(flat, (0..20).collect::<Vec<u64>>());
    }

    #[test]
    fn stratified_epoch_totals_match_cluster_sizes() {
        let assignments: Vec<(u64, usize)> = (0..37).map(|u| (u, (u % 3) as usize)).collect();
        let clustering = clustering_of(&assignments);
        let s = plan_stratified(&samples(37), &clustering, 8, 3, 9).unwrap();
        for epoch in &s.epochs {
            // counting oracle: per-cluster totals over the epoch
            let mut counts: Map<usize, usize> = Map::new();
            for x in epoch.iter().flatten() {
                *counts.entry(clustering.assignments[&x.user_id]).or_insert(0) += 1;
            }
            assert_eq!(counts[&0], 13);
            assert_eq!(counts[&1], 12);
            assert_eq!(counts[&2], 12);
        }
    }

    #[test]
    fn quota_deviation_at_most_one_on_full_batches() {
        let assignments: Vec<(u64, usize)> = (0..97).map(|u| (u, (u % 5) as usize)).collect();
        let clustering = clustering_of(&assignments);
        let s = plan_stratified(&samples(97), &clustering, 12, 1, 17).unwrap();
        let mut remaining: Map<usize, usize> = Map::new();
        for x in s.epochs[0].iter().flatten() {
            *remaining.entry(clustering.assignments[&x.user_id]).or_insert(0) += 1;
        }
        let mut rem_total: usize = remaining.values().sum();
        for batch in &s.epochs[0] {
            if batch.len() < 12 {
                break;
            }
            let mut counts: Map<usize, usize> = Map::new();
            for x in batch {
                *counts.entry(clustering.assignments[&x.user_id]).or_insert(0) += 1;
            }
            for (&cluster, &rem) in &remaining {
                let exact = batch.len() as f64 * rem as f64 / rem_total as f64;
                let got = counts.get(&cluster).copied().unwrap_or(0) as f64;
                assert!(
                    (got - exact).abs() <= 1.0 + 1e-9,
                    "cluster {cluster}: got {got}, exact {exact}"
                );
            }
            for (&cluster, &n) in &counts {
                *remaining.get_mut(&cluster).unwrap() -= n;
            }
            rem_total -= batch.len();
        }
    }

    #[test]
    fn epoch_coverage_identical_across_strategies() {
        let input = samples(41);
        let assignments: Vec<(u64, usize)> = (0..41).map(|u| (u, (u % 4) as usize)).collect();
        let clustering = clustering_of(&assignments);
        let seq = plan_sequential(&input, 8, 2).unwrap();
        let clu = plan_cluster_ordered(&input, &clustering, 8, 2).unwrap();
        let str_ = plan_stratified(&input, &clustering, 8, 2, 1).unwrap();
        for schedule in [&seq, &clu, &str_] {
            for epoch in &schedule.epochs {
                let mut flat: Vec<SampleRef> = epoch.iter().flatten().cloned().collect();
                flat.sort();
                let mut expect = input.clone();
                expect.sort();
                assert_eq!(flat, expect);
            }
        }
    }

    #[test]
    fn stratified_deterministic_and_round_trips() {
        let input = samples(23);
        let assignments: Vec<(u64, usize)> = (0..23).map(|u| (u, (u % 2) as usize)).collect();
        let clustering = clustering_of(&assignments);
        let a = plan_stratified(&input, &clustering, 5, 2, 77).unwrap();
        let b = plan_stratified(&input, &clustering, 5, 2, 77).unwrap();
        assert_eq!(a.to_lines(), b.to_lines());
        let parsed = BatchSchedule::from_lines(&a.to_lines(), Strategy::Stratified, 5).unwrap();
        assert_eq!(parsed.epochs, a.epochs);
    }
}
