//! Window construction and token/feature encoding for the sequence models.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::features::{EnrichedPoint, EnrichedTrajectory, TimeSegment};
use crate::grid::GridSpec;
use crate::sampling::SampleRef;

/// Special tokens ahead of the cell vocabulary.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SPECIALS: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    pub rows: usize,
    pub cols: usize,
    /// Cell tokens observed in the training split; the head can only ever
    /// emit these.
    pub seen: BTreeSet<usize>,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.rows * self.cols + SPECIALS
    }

    pub fn token_of(&self, cell: crate::grid::CellId) -> usize {
        cell.row * self.cols + cell.col + SPECIALS
    }

    pub fn cell_of_token(&self, token: usize) -> Option<crate::grid::CellId> {
        if token < SPECIALS {
            return None;
        }
        let flat = token - SPECIALS;
        Some(crate::grid::CellId {
            row: flat / self.cols,
            col: flat % self.cols,
        })
    }

    /// Input token for a cell: UNK when the cell never appeared in training.
    pub fn input_token(&self, cell: crate::grid::CellId) -> usize {
        let t = self.token_of(cell);
        if self.seen.contains(&t) {
            t
        } else {
            UNK
        }
    }

    pub fn from_train(spec: &GridSpec, train: &[EnrichedTrajectory]) -> Self {
        let mut vocab = Vocab {
            rows: spec.rows,
            cols: spec.cols,
            seen: BTreeSet::new(),
        };
        for t in train {
            for p in &t.points {
                let token = vocab.token_of(p.cell);
                vocab.seen.insert(token);
            }
        }
        vocab
    }
}

pub const DISTANCE_BUCKETS: usize = 16;
pub const DURATION_BUCKETS: usize = 16;

/// Bucketizers for log-distance and log-duration, boundaries at training
/// quantiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub dist_bounds: Vec<f64>,
    pub dur_bounds: Vec<f64>,
}

fn quantile_bounds(values: &mut Vec<f64>, buckets: usize) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0; buckets - 1];
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..buckets)
        .map(|i| {
            let pos = i * values.len() / buckets;
            values[pos.min(values.len() - 1)]
        })
        .collect()
}

fn bucket_of(bounds: &[f64], log_value: f64) -> usize {
    bounds.iter().filter(|b| log_value > **b).count()
}

impl FeatureEncoder {
    pub fn fit(train: &[EnrichedTrajectory]) -> Self {
        let mut dists = Vec::new();
        let mut durs = Vec::new();
        for t in train {
            for p in &t.points {
                dists.push(p.travel_distance_m.max(0.0).ln_1p());
                durs.push(p.duration_min.max(0.0).ln_1p());
            }
        }
        FeatureEncoder {
            dist_bounds: quantile_bounds(&mut dists, DISTANCE_BUCKETS),
            dur_bounds: quantile_bounds(&mut durs, DURATION_BUCKETS),
        }
    }

    pub fn dist_bucket(&self, meters: f64) -> usize {
        bucket_of(&self.dist_bounds, meters.max(0.0).ln_1p())
    }

    pub fn dur_bucket(&self, minutes: f64) -> usize {
        bucket_of(&self.dur_bounds, minutes.max(0.0).ln_1p())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub ext_spatiotemporal: bool,
    pub user_semantic: bool,
    pub fusion: bool,
}

impl FeatureFlags {
    pub fn baseline() -> Self {
        FeatureFlags {
            ext_spatiotemporal: false,
            user_semantic: false,
            fusion: false,
        }
    }
}

/// A window encoded as parallel index arrays, padded to the model length.
/// `mask[i]` marks positions with a real next-point target.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWindow {
    pub len: usize,
    pub cell: Vec<usize>,
    /// Next-point cell token per position (PAD where no target).
    pub target: Vec<usize>,
    pub mask: Vec<bool>,
    pub hour: Vec<usize>,
    pub dow: Vec<usize>,
    pub segment: Vec<usize>,
    pub dist_bucket: Vec<usize>,
    pub dur_bucket: Vec<usize>,
    /// Profile vector broadcast to all positions when user_semantic is on.
    pub semantic: Option<Vec<f64>>,
}

pub fn segment_index(seg: TimeSegment) -> usize {
    match seg {
        TimeSegment::Rush => 0,
        TimeSegment::OffPeak => 1,
    }
}

/// Encode up to `window_len` points, next-token targets shifted by one.
pub fn encode_inputs(
    points: &[&EnrichedPoint],
    profile: Option<&[f64]>,
    flags: FeatureFlags,
    encoder: &FeatureEncoder,
    vocab: &Vocab,
    window_len: usize,
) -> EncodedWindow {
    assert!(points.len() <= window_len, "window longer than model length");
    let mut w = EncodedWindow {
        len: points.len(),
        cell: vec![PAD; window_len],
        target: vec![PAD; window_len],
        mask: vec![false; window_len],
        hour: vec![0; window_len],
        dow: vec![0; window_len],
        segment: vec![0; window_len],
        dist_bucket: vec![0; window_len],
        dur_bucket: vec![0; window_len],
        semantic: None,
    };
    for (i, p) in points.iter().enumerate() {
        w.cell[i] = vocab.input_token(p.cell);
        w.hour[i] = p.local_hour as usize;
        w.dow[i] = p.day_of_week as usize;
        if flags.ext_spatiotemporal {
            w.segment[i] = segment_index(p.time_segment);
            w.dist_bucket[i] = encoder.dist_bucket(p.travel_distance_m);
            w.dur_bucket[i] = encoder.dur_bucket(p.duration_min);
        }
        if i + 1 < points.len() {
            w.target[i] = vocab.token_of(points[i + 1].cell);
            w.mask[i] = true;
        }
    }
    if flags.user_semantic {
        w.semantic = profile.map(|v| v.to_vec());
    }
    w
}

/// Training windows: per-user slides of `window_len` points at `stride`.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// user_id -> window ranges into that user's train points.
    pub windows: BTreeMap<u64, Vec<Range<usize>>>,
    /// Users in original dataset appearance order.
    pub user_order: Vec<u64>,
}

pub fn build_windows(train: &[EnrichedTrajectory], window_len: usize, stride: usize) -> WindowSet {
    assert!(stride >= 1);
    let mut windows = BTreeMap::new();
    let mut user_order = Vec::new();
    for t in train {
        // need at least 2 points for one (input, target) pair
        if t.points.len() < 2 {
            continue;
        }
        let n = t.points.len();
        let mut ranges = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + window_len).min(n);
            ranges.push(start..end);
            if end == n {
                break;
            }
            start += stride;
        }
        user_order.push(t.user_id);
        windows.insert(t.user_id, ranges);
    }
    WindowSet {
        windows,
        user_order,
    }
}

impl WindowSet {
    /// Sample references in original dataset user order.
    pub fn sample_refs(&self) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for &user_id in &self.user_order {
            for w in 0..self.windows[&user_id].len() {
                out.push(SampleRef { user_id, window: w });
            }
        }
        out
    }
}
