//! GEO-BLEU and exact-cell accuracy, plus report aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::haversine;
use crate::grid::CellId;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("prediction/reference length mismatch: {pred} vs {reference}")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("no evaluation units")]
    NoUnits,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeoBleuParams {
    /// Maximum n-gram order.
    pub max_n: usize,
    /// Distance-decay rate per kilometer.
    pub beta_per_km: f64,
}

impl Default for GeoBleuParams {
    fn default() -> Self {
        Self {
            max_n: 3,
            beta_per_km: 0.5,
        }
    }
}

const PRECISION_FLOOR: f64 = 1e-12;

/// BLEU-style trajectory similarity with a distance-decay proximity kernel.
///
/// For each order n up to `max_n` (capped by both sequence lengths), every
/// predicted n-gram is greedily matched to its best-scoring unmatched
/// reference n-gram; the n-gram similarity is the geometric mean over
/// positions of exp(-beta * distance). Orders combine with uniform weights
/// under a brevity penalty.
pub fn geo_bleu(
    pred: &[(f64, f64)],
    reference: &[(f64, f64)],
    params: &GeoBleuParams,
) -> Result<f64, MetricError> {
    if pred.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let n_max = params.max_n.min(pred.len()).min(reference.len()).max(1);
    let mut log_sum = 0.0;
    for n in 1..=n_max {
        let p_n = modified_precision(pred, reference, n, params.beta_per_km);
        log_sum += p_n.max(PRECISION_FLOOR).ln();
    }
    let geo_mean = (log_sum / n_max as f64).exp();
    let bp = brevity_penalty(pred.len(), reference.len());
    Ok((bp * geo_mean).clamp(0.0, 1.0))
}

fn brevity_penalty(pred_len: usize, ref_len: usize) -> f64 {
    if pred_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    }
}

fn ngram_similarity(a: &[(f64, f64)], b: &[(f64, f64)], beta_per_km: f64) -> f64 {
    let n = a.len();
    let mut log_sum = 0.0;
    for i in 0..n {
        let d_km = haversine(a[i], b[i]) / 1000.0;
        log_sum += -beta_per_km * d_km;
    }
    (log_sum / n as f64).exp()
}

fn modified_precision(pred: &[(f64, f64)], reference: &[(f64, f64)], n: usize, beta: f64) -> f64 {
    let pred_grams: Vec<&[(f64, f64)]> = pred.windows(n).collect();
    let ref_grams: Vec<&[(f64, f64)]> = reference.windows(n).collect();
    if pred_grams.is_empty() || ref_grams.is_empty() {
        return 0.0;
    }
    // Greedy best-first matching: repeatedly take the highest-similarity
    // (pred, ref) pair among the still-unmatched grams.
    let mut sims: Vec<(f64, usize, usize)> = Vec::with_capacity(pred_grams.len() * ref_grams.len());
    for (i, pg) in pred_grams.iter().enumerate() {
        for (j, rg) in ref_grams.iter().enumerate() {
            sims.push((ngram_similarity(pg, rg, beta), i, j));
        }
    }
    sims.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = vec![false; pred_grams.len()];
    let mut ref_used = vec![false; ref_grams.len()];
    let mut total = 0.0;
    for (sim, i, j) in sims {
        if !pred_used[i] && !ref_used[j] {
            pred_used[i] = true;
            ref_used[j] = true;
            total += sim;
        }
    }
    total / pred_grams.len() as f64
}

/// Fraction of positions with exactly equal cell ids.
pub fn accuracy(pred: &[CellId], reference: &[CellId]) -> Result<f64, MetricError> {
    if pred.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let matches = pred.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / pred.len() as f64)
}

/// One scored (user, day) unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitScore {
    pub user_id: u64,
    pub day: i64,
    pub geo_bleu: f64,
    pub matches: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Unweighted mean over (user, day) units.
    pub geo_bleu: f64,
    /// Pooled over all positions.
    pub accuracy: f64,
    pub per_unit: Vec<UnitScore>,
    pub skipped_users: usize,
    pub config_fingerprint: String,
}

pub fn aggregate(
    per_unit: Vec<UnitScore>,
    skipped_users: usize,
    config_fingerprint: String,
) -> Result<EvalReport, MetricError> {
    if per_unit.is_empty() {
        return Err(MetricError::NoUnits);
    }
    let geo_bleu = per_unit.iter().map(|u| u.geo_bleu).sum::<f64>() / per_unit.len() as f64;
    let matches: usize = per_unit.iter().map(|u| u.matches).sum();
    let total: usize = per_unit.iter().map(|u| u.total).sum();
    let accuracy = if total == 0 {
        0.0
    } else {
        matches as f64 / total as f64
    };
    Ok(EvalReport {
        geo_bleu,
        accuracy,
        per_unit,
        skipped_users,
        config_fingerprint,
    })
}
