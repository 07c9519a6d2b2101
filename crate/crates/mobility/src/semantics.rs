//! Per-user semantic profiles: top-k PoIs, weighted centroids, category
//! embeddings reduced by a linear autoencoder, and silhouette-selected
//! K-means clustering of users.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::Trajectory;
use crate::nn::{Adam, AdamConfig, ParamSet, Tape, Tensor};

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("weights must have a positive sum")]
    ZeroWeights,
    #[error("autoencoder not fitted")]
    NotFitted,
    #[error("need at least 2 non-singleton clusters for a silhouette score")]
    UndefinedSilhouette,
    #[error("need at least {need} users, got {got}")]
    TooFewUsers { need: usize, got: usize },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad embedding file line {line}: {msg}")]
    BadEmbeddingFile { line: usize, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoiEntry {
    pub lat: f64,
    pub lon: f64,
    pub visit_count: u64,
    pub category_name: String,
}

/// Ranked venues, ties broken by earliest first visit, padded to length k
/// by repeating the last entry.
pub fn top_k_pois(t: &Trajectory, k: usize) -> Result<Vec<PoiEntry>, SemanticsError> {
    if t.points.is_empty() {
        return Err(SemanticsError::EmptyTrajectory);
    }
    struct Acc {
        count: u64,
        first_seen: usize,
        lat: f64,
        lon: f64,
        category: String,
    }
    let mut by_venue: HashMap<&str, Acc> = HashMap::new();
    for (i, p) in t.points.iter().enumerate() {
        by_venue
            .entry(p.venue_id.as_str())
            .and_modify(|a| a.count += 1)
            .or_insert(Acc {
                count: 1,
                first_seen: i,
                lat: p.lat,
                lon: p.lon,
                category: p.venue_category_name.clone(),
            });
    }
    let mut ranked: Vec<Acc> = by_venue.into_values().collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then(a.first_seen.cmp(&b.first_seen)));
    ranked.truncate(k);
    let mut out: Vec<PoiEntry> = ranked
        .into_iter()
        .map(|a| PoiEntry {
            lat: a.lat,
            lon: a.lon,
            visit_count: a.count,
            category_name: a.category,
        })
        .collect();
    while out.len() < k {
        let last = out.last().unwrap().clone();
        out.push(last);
    }
    Ok(out)
}

/// Component-wise weighted mean of coordinates.
pub fn weighted_centroid(
    pois: &[(f64, f64)],
    weights: &[f64],
) -> Result<(f64, f64), SemanticsError> {
    assert_eq!(pois.len(), weights.len());
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(SemanticsError::ZeroWeights);
    }
    let lat = pois.iter().zip(weights).map(|(p, w)| p.0 * w).sum::<f64>() / total;
    let lon = pois.iter().zip(weights).map(|(p, w)| p.1 * w).sum::<f64>() / total;
    Ok((lat, lon))
}

/// Category-name embedding source: a lookup file when provided, otherwise a
/// deterministic seeded-hash fallback. Missing lookups fall back and count.
pub struct EmbeddingProvider {
    table: Option<HashMap<String, Vec<f64>>>,
    pub dim: usize,
    seed: u64,
    fallback_count: AtomicU64,
}

impl EmbeddingProvider {
    pub fn fallback(dim: usize, seed: u64) -> Self {
        EmbeddingProvider {
            table: None,
            dim,
            seed,
            fallback_count: AtomicU64::new(0),
        }
    }

    /// Load "category-name<TAB>v1 v2 ... vDIM" lines.
    pub fn from_reader<R: BufRead>(reader: R, dim: usize, seed: u64) -> Result<Self, SemanticsError> {
        let mut table = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (name, rest) = line.split_once('\t').ok_or(SemanticsError::BadEmbeddingFile {
                line: i + 1,
                msg: "missing tab separator".into(),
            })?;
            let values: Result<Vec<f64>, _> =
                rest.split_whitespace().map(str::parse::<f64>).collect();
            let values = values.map_err(|e| SemanticsError::BadEmbeddingFile {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if values.len() != dim {
                return Err(SemanticsError::BadEmbeddingFile {
                    line: i + 1,
                    msg: format!("expected {dim} values, got {}", values.len()),
                });
            }
            table.insert(name.to_string(), values);
        }
        Ok(EmbeddingProvider {
            table: Some(table),
            dim,
            seed,
            fallback_count: AtomicU64::new(0),
        })
    }

    pub fn embed(&self, name: &str) -> Vec<f64> {
        if let Some(table) = &self.table {
            if let Some(v) = table.get(name) {
                return v.clone();
            }
            self.fallback_count.fetch_add(1, Ordering::Relaxed);
        }
        self.hash_embed(name)
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallback_count.load(Ordering::Relaxed)
    }

    /// Seeded hash of the name expands to `dim` unit-variance pseudo-random
    /// values via Box-Muller.
    fn hash_embed(&self, name: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }
}

/// Single-hidden-layer linear autoencoder used to compress the stacked
/// top-k category embeddings into one latent vector per user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Autoencoder {
    pub input_dim: usize,
    pub latent_dim: usize,
    params: Option<ParamSet>,
}

impl Autoencoder {
    pub fn new(input_dim: usize, latent_dim: usize) -> Self {
        Autoencoder {
            input_dim,
            latent_dim,
            params: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.params.is_some()
    }

    /// Least-squares reconstruction training, Adam lr 1e-3, deterministic
    /// under the seed. `inputs` is one stacked row per user.
    pub fn fit(&mut self, inputs: &Tensor, epochs: usize, seed: u64) -> Vec<f64> {
        assert_eq!(inputs.cols, self.input_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (self.input_dim as f64).sqrt();
        let mut params = ParamSet::new();
        let w_enc = params.add(
            "enc.w",
            Tensor::uniform(self.input_dim, self.latent_dim, scale, &mut rng),
        );
        let b_enc = params.add("enc.b", Tensor::zeros(1, self.latent_dim));
        let w_dec = params.add(
            "dec.w",
            Tensor::uniform(self.latent_dim, self.input_dim, scale, &mut rng),
        );
        let b_dec = params.add("dec.b", Tensor::zeros(1, self.input_dim));

        let shapes = params.shapes();
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3), &params);
        let mut losses = Vec::with_capacity(epochs + 1);
        for _ in 0..=epochs {
            let mut tape = Tape::new();
            let x = tape.constant(inputs.clone());
            let we = tape.param(params.tensors[w_enc].clone(), w_enc);
            let be = tape.param(params.tensors[b_enc].clone(), b_enc);
            let wd = tape.param(params.tensors[w_dec].clone(), w_dec);
            let bd = tape.param(params.tensors[b_dec].clone(), b_dec);
            let z = tape.matmul(x, we);
            let z = tape.add_row_broadcast(z, be);
            let y = tape.matmul(z, wd);
            let y = tape.add_row_broadcast(y, bd);
            let loss = tape.mse_mean(y, inputs);
            losses.push(tape.scalar(loss));
            if losses.len() > epochs {
                break;
            }
            let grads = tape.backward(loss, &shapes);
            opt.step(&mut params, &grads);
        }
        self.params = Some(params);
        losses
    }

    /// Encoder half: stacked input row -> latent vector.
    pub fn encode(&self, input: &[f64]) -> Result<Vec<f64>, SemanticsError> {
        let params = self.params.as_ref().ok_or(SemanticsError::NotFitted)?;
        assert_eq!(input.len(), self.input_dim);
        let w = &params.tensors[0];
        let b = &params.tensors[1];
        let mut out = b.data.clone();
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = w.row(i);
            for (o, wv) in out.iter_mut().zip(row) {
                *o += x * wv;
            }
        }
        Ok(out)
    }

    pub fn reconstruction_loss(&self, inputs: &Tensor) -> Result<f64, SemanticsError> {
        let params = self.params.as_ref().ok_or(SemanticsError::NotFitted)?;
        let mut total = 0.0;
        for r in 0..inputs.rows {
            let z = self.encode(inputs.row(r))?;
            let wd = &params.tensors[2];
            let bd = &params.tensors[3];
            let mut y = bd.data.clone();
            for (i, &zv) in z.iter().enumerate() {
                let row = wd.row(i);
                for (o, wv) in y.iter_mut().zip(row) {
                    *o += zv * wv;
                }
            }
            total += y
                .iter()
                .zip(inputs.row(r))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        Ok(total / (inputs.rows * inputs.cols) as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u64,
    pub top_pois: Vec<PoiEntry>,
    pub centroid: (f64, f64),
    pub cluster_id: usize,
    pub semantic_vector: Vec<f64>,
    pub rcr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// user_id -> cluster_id, stable ordering for serialization.
    pub assignments: std::collections::BTreeMap<u64, usize>,
    pub centers: Vec<(f64, f64)>,
    pub silhouette: Option<f64>,
    /// Set when the input was degenerate and clustering fell back to K=1.
    pub degenerate: bool,
}

/// Mean silhouette over points, Euclidean distance, singleton clusters
/// scoring 0 by convention.
pub fn silhouette(points: &[(f64, f64)], assignments: &[usize]) -> Result<f64, SemanticsError> {
    assert_eq!(points.len(), assignments.len());
    let k = assignments.iter().max().map(|m| m + 1).unwrap_or(0);
    if k < 2 || points.len() < 2 {
        return Err(SemanticsError::UndefinedSilhouette);
    }
    let mut cluster_sizes = vec![0usize; k];
    for &a in assignments {
        cluster_sizes[a] += 1;
    }
    if cluster_sizes.iter().any(|&s| s == 0) {
        return Err(SemanticsError::UndefinedSilhouette);
    }

    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, &p) in points.iter().enumerate() {
        let own = assignments[i];
        if cluster_sizes[own] == 1 {
            continue; // s = 0
        }
        let mut sums = vec![0.0; k];
        for (j, &q) in points.iter().enumerate() {
            if i != j {
                sums[assignments[j]] += dist(p, q);
            }
        }
        let a = sums[own] / (cluster_sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / cluster_sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Seeded K-means: greedy farthest-point init, at most 100 iterations,
/// convergence when no assignment changes. Returns (assignments, centers, wcss trace).
pub fn kmeans(
    points: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> (Vec<usize>, Vec<(f64, f64)>, Vec<f64>) {
    assert!(k >= 1 && k <= points.len());
    let dist2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())]);
    while centers.len() < k {
        let far = points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let d = centers
                    .iter()
                    .map(|&c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        centers.push(points[far]);
    }

    let mut assignments = vec![0usize; points.len()];
    let mut wcss_trace = Vec::new();
    for _ in 0..100 {
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, &p) in points.iter().enumerate() {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(c, &ctr)| (c, dist2(p, ctr)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            wcss += d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        wcss_trace.push(wcss);
        // recompute centers; empty clusters keep their previous center
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (i, &p) in points.iter().enumerate() {
            let s = &mut sums[assignments[i]];
            s.0 += p.0;
            s.1 += p.1;
            s.2 += 1;
        }
        for (c, s) in sums.iter().enumerate() {
            if s.2 > 0 {
                centers[c] = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        if !changed {
            break;
        }
    }
    (assignments, centers, wcss_trace)
}

pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 2..=15;

/// Which per-user vector drives the clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterFeature {
    /// Geographic weighted centroid (the default).
    Centroid,
    /// First two principal coordinates of the semantic vector are not used;
    /// the full semantic vector distance drives assignment instead.
    Semantic,
}

/// Run seeded K-means for each K in range on user centroids and return the
/// silhouette-maximizing clustering; ties go to the smallest K.
pub fn cluster_users(
    profiles: &mut [UserProfile],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    feature: ClusterFeature,
) -> Result<Clustering, SemanticsError> {
    let max_k = *k_range.end();
    if profiles.len() < max_k + 1 {
        return Err(SemanticsError::TooFewUsers {
            need: max_k + 1,
            got: profiles.len(),
        });
    }

    // Semantic mode clusters in the full latent space; for the centroid mode
    // the 2-d geographic point is the feature.
    let points_2d: Vec<(f64, f64)> = profiles.iter().map(|p| p.centroid).collect();
    let degenerate = points_2d.iter().all(|&p| p == points_2d[0]);
    if degenerate {
        for p in profiles.iter_mut() {
            p.cluster_id = 0;
        }
        return Ok(Clustering {
            k: 1,
            assignments: profiles.iter().map(|p| (p.user_id, 0)).collect(),
            centers: vec![points_2d[0]],
            silhouette: None,
            degenerate: true,
        });
    }

    let features: Vec<Vec<f64>> = match feature {
        ClusterFeature::Centroid => points_2d.iter().map(|&(a, b)| vec![a, b]).collect(),
        ClusterFeature::Semantic => profiles.iter().map(|p| p.semantic_vector.clone()).collect(),
    };

    let mut best: Option<(f64, usize, Vec<usize>, Vec<Vec<f64>>)> = None;
    for k in k_range {
        if k > profiles.len() {
            continue;
        }
        let (assignments, centers) = kmeans_nd(&features, k, seed);
        let score = match silhouette_nd(&features, &assignments) {
            Ok(s) => s,
            Err(_) => continue,
        };
        // K ascends, so keeping only strict improvements resolves ties
        // toward the smallest K.
        let better = match &best {
            None => true,
            Some((best_score, _, _, _)) => score > *best_score,
        };
        if better {
            best = Some((score, k, assignments, centers));
        }
    }
    let (score, k, assignments, _feature_centers) = best.ok_or(SemanticsError::UndefinedSilhouette)?;

    for (p, &a) in profiles.iter_mut().zip(&assignments) {
        p.cluster_id = a;
    }
    let centers_2d = (0..k)
        .map(|c| {
            // report geographic centers regardless of the clustering feature
            let members: Vec<(f64, f64)> = profiles
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p.centroid)
                .collect();
            let n = members.len().max(1) as f64;
            (
                members.iter().map(|m| m.0).sum::<f64>() / n,
                members.iter().map(|m| m.1).sum::<f64>() / n,
            )
        })
        .collect();
    Ok(Clustering {
        k,
        assignments: profiles.iter().map(|p| (p.user_id, p.cluster_id)).collect(),
        centers: centers_2d,
        silhouette: Some(score),
        degenerate: false,
    })
}

fn dist2_nd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_nd(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..points.len())].clone()];
    while centers.len() < k {
        let far = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = centers
                    .iter()
                    .map(|c| dist2_nd(p, c))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        centers.push(points[far].clone());
    }
    let mut assignments = vec![0usize; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, dist2_nd(p, ctr)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(vec![0.0; dim], 0usize); k];
        for (i, p) in points.iter().enumerate() {
            let s = &mut sums[assignments[i]];
            for (acc, v) in s.0.iter_mut().zip(p) {
                *acc += v;
            }
            s.1 += 1;
        }
        for (c, (sum, n)) in sums.into_iter().enumerate() {
            if n > 0 {
                centers[c] = sum.into_iter().map(|v| v / n as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    (assignments, centers)
}

fn silhouette_nd(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64, SemanticsError> {
    let k = assignments.iter().max().map(|m| m + 1).unwrap_or(0);
    if k < 2 {
        return Err(SemanticsError::UndefinedSilhouette);
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(SemanticsError::UndefinedSilhouette);
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[assignments[j]] += dist2_nd(p, q).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Assemble profiles from train-period trajectories: top-k PoIs, weighted
/// centroid, and the reduced semantic vector. `cluster_id` is filled by
/// [`cluster_users`].
pub fn build_profiles(
    trajectories: &[Trajectory],
    k: usize,
    provider: &EmbeddingProvider,
    latent_dim: usize,
    ae_epochs: usize,
    seed: u64,
) -> Result<(Vec<UserProfile>, Autoencoder), SemanticsError> {
    let usable: Vec<&Trajectory> = trajectories.iter().filter(|t| !t.points.is_empty()).collect();
    let input_dim = k * provider.dim;
    let mut stacked_rows = Vec::with_capacity(usable.len());
    let mut partial = Vec::with_capacity(usable.len());

    for t in &usable {
        let pois = top_k_pois(t, k)?;
        let coords: Vec<(f64, f64)> = pois.iter().map(|p| (p.lat, p.lon)).collect();
        let weights: Vec<f64> = pois.iter().map(|p| p.visit_count as f64).collect();
        let centroid = weighted_centroid(&coords, &weights)?;
        let mut stacked = Vec::with_capacity(input_dim);
        for p in &pois {
            stacked.extend(provider.embed(&p.category_name));
        }
        stacked_rows.push(stacked);
        let rcr = crate::ingest::compute_rcr(t).unwrap_or(0.0);
        partial.push((t.user_id, pois, centroid, rcr));
    }

    let mut inputs = Tensor::zeros(stacked_rows.len(), input_dim);
    for (r, row) in stacked_rows.iter().enumerate() {
        inputs.data[r * input_dim..(r + 1) * input_dim].copy_from_slice(row);
    }
    let mut ae = Autoencoder::new(input_dim, latent_dim);
    ae.fit(&inputs, ae_epochs, seed);

    let mut profiles = Vec::with_capacity(partial.len());
    for ((user_id, pois, centroid, rcr), row) in partial.into_iter().zip(&stacked_rows) {
        let semantic_vector = ae.encode(row)?;
        profiles.push(UserProfile {
            user_id,
            top_pois: pois,
            centroid,
            cluster_id: 0,
            semantic_vector,
            rcr,
        });
    }
    Ok((profiles, ae))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_trajectories, parse_checkins, ColumnSchema};
    use std::io::Cursor;

    fn trajectory(rows: &str) -> Trajectory {
        let out = parse_checkins(Cursor::new(rows), &ColumnSchema::foursquare_tsv()).unwrap();
        build_trajectories(&out.checkins).remove(0)
    }

    #[test]
    fn top_k_pads_by_repeating_last() {
        let mut rows = String::new();
        for i in 0..6 {
            rows.push_str(&format!(
                "1\tv{}\tc\tPark\t40.0\t-74.0\t0\t2012-04-03T{:02}:00:00\n",
                i % 3,
                9 + i
            ));
        }
        let pois = top_k_pois(&trajectory(&rows), 10).unwrap();
        assert_eq!(pois.len(), 10);
        // 3 distinct venues; entries 3..10 repeat the third
        for i in 3..10 {
            assert_eq!(pois[i].visit_count, pois[2].visit_count);
        }
    }

    #[test]
    fn top_k_takes_top_by_count() {
        let mut rows = String::new();
        for venue in 0..12 {
            for visit in 0..=venue {
                rows.push_str(&format!(
                    "1\tv{venue}\tc\tPark\t40.0\t-74.0\t0\t2012-04-{:02}T{:02}:00:00\n",
                    3 + visit % 20,
                    visit % 24
                ));
            }
        }
        let pois = top_k_pois(&trajectory(&rows), 10).unwrap();
        assert_eq!(pois.len(), 10);
        assert_eq!(pois[0].visit_count, 12);
        assert_eq!(pois[9].visit_count, 3);
    }

    #[test]
    fn top_k_counts_match_brute_force() {
        // counting oracle: plain group-by over the raw rows
        let mut rows = String::new();
        for i in 0..200 {
            rows.push_str(&format!(
                "1\tv{}\tc\tPark\t40.0\t-74.0\t0\t2012-04-{:02}T{:02}:00:00\n",
                i * 7 % 23,
                3 + i % 25,
                i % 24
            ));
        }
        let t = trajectory(&rows);
        let pois = top_k_pois(&t, 5).unwrap();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for p in &t.points {
            *counts.entry(p.venue_id.as_str()).or_insert(0) += 1;
        }
        let mut sorted: Vec<u64> = counts.values().cloned().collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        for (i, p) in pois.iter().enumerate() {
            assert_eq!(p.visit_count, sorted[i]);
        }
    }

    #[test]
    fn top_k_empty_trajectory_errors() {
        let t = Trajectory {
            user_id: 1,
            points: vec![],
        };
        assert!(top_k_pois(&t, 10).is_err());
    }

    #[test]
    fn centroid_equal_weights_is_midpoint() {
        let c = weighted_centroid(&[(40.0, -74.0), (41.0, -73.0)], &[1.0, 1.0]).unwrap();
        assert!((c.0 - 40.5).abs() < 1e-12);
        assert!((c.1 + 73.5).abs() < 1e-12);
    }

    #[test]
    fn centroid_single_point_identity() {
        let c = weighted_centroid(&[(40.0, -74.0)], &[3.7]).unwrap();
        assert_eq!(c, (40.0, -74.0));
    }

    #[test]
    fn centroid_3_1_weighting() {
        let a = (40.0, -74.0);
        let b = (41.0, -73.0);
        let c = weighted_centroid(&[a, b], &[3.0, 1.0]).unwrap();
        // direct-sum oracle
        let lat = (3.0 * a.0 + 1.0 * b.0) / 4.0;
        let lon = (3.0 * a.1 + 1.0 * b.1) / 4.0;
        assert!((c.0 - lat).abs() < 1e-12);
        assert!((c.1 - lon).abs() < 1e-12);
    }

    #[test]
    fn centroid_zero_weights_error() {
        assert!(weighted_centroid(&[(40.0, -74.0)], &[0.0]).is_err());
    }

    #[test]
    fn centroid_scale_invariant_in_weights() {
        let pts = [(40.0, -74.0), (41.0, -73.5), (40.5, -73.8)];
        let w = [1.0, 2.0, 5.0];
        let w10: Vec<f64> = w.iter().map(|x| x * 10.0).collect();
        let c1 = weighted_centroid(&pts, &w).unwrap();
        let c2 = weighted_centroid(&pts, &w10).unwrap();
        assert!((c1.0 - c2.0).abs() < 1e-12);
        assert!((c1.1 - c2.1).abs() < 1e-12);
    }

    #[test]
    fn embedding_deterministic() {
        let p = EmbeddingProvider::fallback(512, 42);
        assert_eq!(p.embed("Coffee Shop"), p.embed("Coffee Shop"));
    }

    #[test]
    fn distinct_names_mostly_dissimilar() {
        // sampling oracle: cosine similarity of independent gaussian vectors
        let p = EmbeddingProvider::fallback(512, 42);
        let mut low = 0usize;
        let n = 1000;
        for i in 0..n {
            let a = p.embed(&format!("cat-a-{i}"));
            let b = p.embed(&format!("cat-b-{i}"));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (dot / (na * nb)).abs() < 0.5 {
                low += 1;
            }
        }
        assert!(low as f64 / n as f64 >= 0.99);
    }

    #[test]
    fn provider_file_lookup_exact() {
        let dim = 4;
        let file = "Coffee Shop\t0.1 0.2 0.3 0.4\nBar\t1 2 3 4\n";
        let p = EmbeddingProvider::from_reader(Cursor::new(file), dim, 0).unwrap();
        assert_eq!(p.embed("Coffee Shop"), vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(p.fallbacks(), 0);
        let _ = p.embed("Unknown Category");
        assert_eq!(p.fallbacks(), 1);
    }

    #[test]
    fn autoencoder_descends_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = Tensor::uniform(10, 16, 1.0, &mut rng);
        let mut ae1 = Autoencoder::new(16, 4);
        let losses = ae1.fit(&inputs, 100, 7);
        assert!(losses.last().unwrap() < &losses[0]);
        let mut ae2 = Autoencoder::new(16, 4);
        ae2.fit(&inputs, 100, 7);
        assert_eq!(ae1.encode(inputs.row(0)).unwrap(), ae2.encode(inputs.row(0)).unwrap());
    }

    #[test]
    fn autoencoder_identity_capacity() {
        // bottleneck = input width: linear AE can reach near-zero error
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = Tensor::uniform(20, 6, 1.0, &mut rng);
        let mut ae = Autoencoder::new(6, 6);
        ae.fit(&inputs, 4000, 3);
        let loss = ae.reconstruction_loss(&inputs).unwrap();
        assert!(loss < 1e-3, "reconstruction loss {loss}");
    }

    #[test]
    fn autoencoder_unfitted_errors() {
        let ae = Autoencoder::new(8, 2);
        assert!(ae.encode(&[0.0; 8]).is_err());
    }

    #[test]
    fn silhouette_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points = Vec::new();
        let mut assignments = Vec::new();
        for i in 0..50 {
            let cluster = i % 3;
            points.push((
                cluster as f64 * 3.0 + rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
            assignments.push(cluster);
        }
        let got = silhouette(&points, &assignments).unwrap();
        // O(n^2) brute force straight from the definition
        let dist =
            |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let mut total = 0.0;
        for i in 0..50 {
            let own = assignments[i];
            let a_vals: Vec<f64> = (0..50)
                .filter(|&j| j != i && assignments[j] == own)
                .map(|j| dist(points[i], points[j]))
                .collect();
            let a = a_vals.iter().sum::<f64>() / a_vals.len() as f64;
            let mut b = f64::INFINITY;
            for c in 0..3 {
                if c == own {
                    continue;
                }
                let vals: Vec<f64> = (0..50)
                    .filter(|&j| assignments[j] == c)
                    .map(|j| dist(points[i], points[j]))
                    .collect();
                b = b.min(vals.iter().sum::<f64>() / vals.len() as f64);
            }
            total += (b - a) / a.max(b);
        }
        assert!((got - total / 50.0).abs() < 1e-9);
    }

    #[test]
    fn silhouette_two_singletons_mean_zero() {
        let s = silhouette(&[(0.0, 0.0), (5.0, 5.0)], &[0, 1]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn silhouette_label_permutation_invariant() {
        let points = vec![(0.0, 0.0), (0.1, 0.0), (5.0, 5.0), (5.1, 5.0)];
        let s1 = silhouette(&points, &[0, 0, 1, 1]).unwrap();
        let s2 = silhouette(&points, &[1, 1, 0, 0]).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn silhouette_singleton_total_errors() {
        assert!(silhouette(&[(0.0, 0.0)], &[0]).is_err());
    }

    #[test]
    fn silhouette_perfect_two_blob() {
        let mut points = Vec::new();
        let mut assignments = Vec::new();
        for i in 0..10 {
            points.push((i as f64 * 0.01, 0.0));
            assignments.push(0);
            points.push((100.0 + i as f64 * 0.01, 0.0));
            assignments.push(1);
        }
        assert!(silhouette(&points, &assignments).unwrap() > 0.8);
    }

    fn blob_profiles() -> Vec<UserProfile> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut profiles = Vec::new();
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        for (b, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..20 {
                profiles.push(UserProfile {
                    user_id: (b * 20 + i) as u64,
                    top_pois: vec![],
                    centroid: (cx + rng.gen_range(-0.3..0.3), cy + rng.gen_range(-0.3..0.3)),
                    cluster_id: 0,
                    semantic_vector: vec![0.0; 4],
                    rcr: 0.0,
                });
            }
        }
        profiles
    }

    #[test]
    fn three_blobs_recover_k3_exactly() {
        let mut profiles = blob_profiles();
        let c = cluster_users(&mut profiles, 2..=8, 1, ClusterFeature::Centroid).unwrap();
        assert_eq!(c.k, 3);
        // assignments must match blob membership up to relabeling
        for b in 0..3 {
            let labels: std::collections::HashSet<usize> = (0..20)
                .map(|i| c.assignments[&((b * 20 + i) as u64)])
                .collect();
            assert_eq!(labels.len(), 1, "blob {b} split across clusters");
        }
    }

    #[test]
    fn degenerate_input_falls_back_to_k1() {
        let mut profiles: Vec<UserProfile> = (0..20)
            .map(|i| UserProfile {
                user_id: i,
                top_pois: vec![],
                centroid: (40.0, -74.0),
                cluster_id: 7,
                semantic_vector: vec![],
                rcr: 0.0,
            })
            .collect();
        let c = cluster_users(&mut profiles, 2..=8, 1, ClusterFeature::Centroid).unwrap();
        assert_eq!(c.k, 1);
        assert!(c.degenerate);
        assert!(c.silhouette.is_none());
        assert!(profiles.iter().all(|p| p.cluster_id == 0));
    }

    #[test]
    fn clustering_deterministic_under_seed() {
        let mut p1 = blob_profiles();
        let mut p2 = blob_profiles();
        let c1 = cluster_users(&mut p1, 2..=8, 5, ClusterFeature::Centroid).unwrap();
        let c2 = cluster_users(&mut p2, 2..=8, 5, ClusterFeature::Centroid).unwrap();
        assert_eq!(c1.assignments, c2.assignments);
        assert_eq!(c1.k, c2.k);
    }

    #[test]
    fn too_few_users_rejected() {
        let mut profiles = blob_profiles();
        profiles.truncate(5);
        assert!(cluster_users(&mut profiles, 2..=15, 1, ClusterFeature::Centroid).is_err());
    }

    #[test]
    fn kmeans_objective_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
            .collect();
        let (_, _, trace) = kmeans(&points, 4, 2);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "wcss increased: {:?}", w);
        }
    }
}
