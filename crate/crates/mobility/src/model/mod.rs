//! Sequence modelling: window encoding, the LSTM/Transformer predictors,
//! the training loop, autoregressive decoding, and the historical-visit
//! baseline.

pub mod encoder;
pub mod hv;
pub mod net;

pub use encoder::{
    build_windows, encode_inputs, EncodedWindow, FeatureEncoder, FeatureFlags, Vocab, WindowSet,
    PAD, SPECIALS, UNK,
};
pub use hv::hv_predict;
pub use net::{Arch, ModelConfig, SeqNet};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{haversine, time_segment, EnrichedPoint, EnrichedTrajectory};
use crate::grid::{centroid_of, CellId, GridSpec};
use crate::nn::{Adam, AdamConfig, Tape};
use crate::sampling::BatchSchedule;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite loss at step {step}; aborting")]
    NonFiniteLoss { step: usize },
    #[error("schedule references user {0} with no training windows")]
    UnknownUser(u64),
    #[error("schedule references window {window} of user {user}, out of range")]
    BadWindow { user: u64, window: usize },
}

/// The timestamp of a point to predict; temporal inputs are known at
/// prediction time, only the cell is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTime {
    pub day_index: i64,
    pub day_of_week: u32,
    pub local_hour: u32,
    pub minute_of_day: u32,
}

impl TargetTime {
    pub fn of_point(p: &EnrichedPoint) -> Self {
        TargetTime {
            day_index: p.day_index,
            day_of_week: p.day_of_week,
            local_hour: p.local_hour,
            minute_of_day: p.minute_of_day,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSource {
    Model,
    Historical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCandidate {
    pub cell: CellId,
    pub lat: f64,
    pub lon: f64,
    pub day_index: i64,
    pub minute_of_day: u32,
    /// Model probability, or a slot-frequency weight for historical
    /// candidates.
    pub score: f64,
    pub source: CandidateSource,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SeqNet,
    /// One averaged batch loss per optimizer step.
    pub loss_curve: Vec<f64>,
}

/// Train a model by walking a batch schedule with Adam. Deterministic for a
/// fixed (config, schedule, data) triple.
pub fn train(
    config: ModelConfig,
    train_set: &[EnrichedTrajectory],
    windows: &WindowSet,
    schedule: &BatchSchedule,
    fenc: &FeatureEncoder,
    vocab: &Vocab,
    profiles: Option<&BTreeMap<u64, Vec<f64>>>,
) -> Result<TrainOutcome, ModelError> {
    let by_user: BTreeMap<u64, &[EnrichedPoint]> = train_set
        .iter()
        .map(|t| (t.user_id, t.points.as_slice()))
        .collect();

    let mut net = SeqNet::new(config, vocab.clone());
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &net.params);
    let mut loss_curve = Vec::new();
    let mut step = 0usize;

    for epoch in &schedule.epochs {
        for batch in epoch {
            if batch.is_empty() {
                continue;
            }
            let mut encoded = Vec::with_capacity(batch.len());
            for s in batch {
                let points = by_user
                    .get(&s.user_id)
                    .ok_or(ModelError::UnknownUser(s.user_id))?;
                let ranges = windows
                    .windows
                    .get(&s.user_id)
                    .ok_or(ModelError::UnknownUser(s.user_id))?;
                let range = ranges.get(s.window).ok_or(ModelError::BadWindow {
                    user: s.user_id,
                    window: s.window,
                })?;
                let slice: Vec<&EnrichedPoint> = points[range.clone()].iter().collect();
                let profile = profiles.and_then(|p| p.get(&s.user_id)).map(|v| v.as_slice());
                encoded.push(encode_inputs(
                    &slice,
                    profile,
                    config.flags,
                    fenc,
                    vocab,
                    config.window_len,
                ));
            }
            let refs: Vec<&EncodedWindow> = encoded.iter().collect();

            let mut tape = Tape::new();
            let leaves = net.leaves(&mut tape);
            let loss = net.batch_loss(&mut tape, &leaves, &refs);
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(ModelError::NonFiniteLoss { step });
            }
            let grads = tape.backward(loss, &net.params.shapes());
            opt.step(&mut net.params, &grads);
            loss_curve.push(loss_value);
            step += 1;
        }
    }

    Ok(TrainOutcome { net, loss_curve })
}

/// Central finite differences over a deterministic sample of parameter
/// elements; returns the maximum relative error against the tape gradients.
pub fn gradient_check(
    net: &SeqNet,
    batch: &[&EncodedWindow],
    max_elements: usize,
    h: f64,
) -> f64 {
    let mut tape = Tape::new();
    let leaves = net.leaves(&mut tape);
    let loss = net.batch_loss(&mut tape, &leaves, batch);
    let analytic = tape.backward(loss, &net.params.shapes());

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, t) in net.params.tensors.iter().enumerate() {
        for ei in 0..t.len() {
            coords.push((pi, ei));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed);
    coords.shuffle(&mut rng);
    coords.truncate(max_elements);

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (pi, ei) in coords {
        let orig = probe.params.tensors[pi].data[ei];
        probe.params.tensors[pi].data[ei] = orig + h;
        let up = probe.eval_loss(batch);
        probe.params.tensors[pi].data[ei] = orig - h;
        let down = probe.eval_loss(batch);
        probe.params.tensors[pi].data[ei] = orig;

        let numeric = (up - down) / (2.0 * h);
        let exact = analytic[pi].data[ei];
        let denom = numeric.abs().max(exact.abs()).max(1e-6);
        worst = worst.max((numeric - exact).abs() / denom);
    }
    worst
}

/// Greedy autoregressive decode: one candidate per target timestamp, each
/// prediction fed back as context for the next. Empty history yields no
/// candidates (the caller records the user as skipped).
pub fn predict_sequence(
    net: &SeqNet,
    history: &[EnrichedPoint],
    targets: &[TargetTime],
    profile: Option<&[f64]>,
    fenc: &FeatureEncoder,
    spec: &GridSpec,
) -> Vec<PredictionCandidate> {
    if history.is_empty() || net.vocab.seen.is_empty() {
        return Vec::new();
    }
    let mut ctx: Vec<EnrichedPoint> = history.to_vec();
    let mut out = Vec::with_capacity(targets.len());
    for t in targets {
        let start = ctx.len().saturating_sub(net.config.window_len);
        let slice: Vec<&EnrichedPoint> = ctx[start..].iter().collect();
        let w = encode_inputs(
            &slice,
            profile,
            net.config.flags,
            fenc,
            &net.vocab,
            net.config.window_len,
        );
        let (token, score) = net.argmax_next(&w);
        let cell = net
            .vocab
            .cell_of_token(token)
            .expect("argmax over seen cell tokens only");
        let (lat, lon) = centroid_of(cell, spec);
        let prev = ctx.last().unwrap();
        let dist = haversine((prev.lat, prev.lon), (lat, lon));
        let dur = ((t.day_index * 1440 + t.minute_of_day as i64)
            - (prev.day_index * 1440 + prev.minute_of_day as i64))
            .max(0) as f64;
        ctx.push(EnrichedPoint {
            cell,
            lat,
            lon,
            day_index: t.day_index,
            day_of_week: t.day_of_week,
            local_hour: t.local_hour,
            minute_of_day: t.minute_of_day,
            time_segment: time_segment(t.local_hour),
            travel_distance_m: dist,
            duration_min: dur,
            category_id: String::new(),
            category_name: String::new(),
            venue_id: String::new(),
        });
        out.push(PredictionCandidate {
            cell,
            lat,
            lon,
            day_index: t.day_index,
            minute_of_day: t.minute_of_day,
            score,
            source: CandidateSource::Model,
        });
    }
    out
}

/// Run every schedule reference through `train` and the curve back.
pub fn schedule_is_compatible(windows: &WindowSet, schedule: &BatchSchedule) -> bool {
    schedule.epochs.iter().flatten().flatten().all(|s| {
        windows
            .windows
            .get(&s.user_id)
            .map(|r| s.window < r.len())
            .unwrap_or(false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{EnrichedPoint, EnrichedTrajectory};
    use crate::grid::build_grid;
    use crate::sampling::plan_sequential;

    fn grid_3x3() -> GridSpec {
        build_grid(&[(35.0, 139.0), (36.0, 140.0)], 3, 3).unwrap()
    }

    fn point_at(cell: CellId, spec: &GridSpec, day: i64, hour: u32) -> EnrichedPoint {
        let (lat, lon) = centroid_of(cell, spec);
        EnrichedPoint {
            cell,
            lat,
            lon,
            day_index: day,
            day_of_week: (day.rem_euclid(7)) as u32,
            local_hour: hour,
            minute_of_day: hour * 60,
            time_segment: time_segment(hour),
            travel_distance_m: 0.0,
            duration_min: 0.0,
            category_id: "c".into(),
            category_name: "Park".into(),
            venue_id: "v".into(),
        }
    }

    /// A user walking a fixed cycle of cells, hour advancing each step.
    fn cyclic_user(user_id: u64, cycle: &[CellId], n: usize, spec: &GridSpec) -> EnrichedTrajectory {
        let points = (0..n)
            .map(|i| {
                point_at(
                    cycle[i % cycle.len()],
                    spec,
                    (i / 8) as i64,
                    ((9 + i) % 24) as u32,
                )
            })
            .collect();
        EnrichedTrajectory {
            user_id,
            points,
            dropped_out_of_bbox: 0,
        }
    }

    fn cycle_cells() -> Vec<CellId> {
        vec![
            CellId { row: 0, col: 0 },
            CellId { row: 1, col: 1 },
            CellId { row: 2, col: 2 },
            CellId { row: 0, col: 2 },
        ]
    }

    fn train_on_cycle(arch: Arch, steps_hint: usize) -> (TrainOutcome, GridSpec, EnrichedTrajectory) {
        let spec = grid_3x3();
        let user = cyclic_user(1, &cycle_cells(), 64, &spec);
        let train_set = vec![user.clone()];
        let mut cfg = ModelConfig::tiny(arch);
        cfg.epochs = steps_hint;
        let vocab = Vocab::from_train(&spec, &train_set);
        let fenc = FeatureEncoder::fit(&train_set);
        let windows = build_windows(&train_set, cfg.window_len, cfg.stride);
        let schedule =
            plan_sequential(&windows.sample_refs(), cfg.batch_size, cfg.epochs).unwrap();
        let out = train(cfg, &train_set, &windows, &schedule, &fenc, &vocab, None).unwrap();
        (out, spec, user)
    }

    #[test]
    fn lstm_learns_periodic_sequence() {
        let (out, spec, user) = train_on_cycle(Arch::Lstm, 40);
        let first = out.loss_curve[0];
        let last = *out.loss_curve.last().unwrap();
        assert!(
            last < 0.25 * first,
            "loss should collapse on a deterministic cycle: {first} -> {last}"
        );
        // decode continues the cycle
        let fenc = FeatureEncoder::fit(&[user.clone()]);
        let targets: Vec<TargetTime> = (0..4)
            .map(|i| TargetTime {
                day_index: 9,
                day_of_week: 2,
                local_hour: (9 + i) % 24,
                minute_of_day: ((9 + i) % 24) * 60,
            })
            .collect();
        let preds = predict_sequence(&out.net, &user.points, &targets, None, &fenc, &spec);
        let cycle = cycle_cells();
        let n = user.points.len();
        let mut hits = 0;
        for (i, p) in preds.iter().enumerate() {
            if p.cell == cycle[(n + i) % cycle.len()] {
                hits += 1;
            }
        }
        assert!(hits >= 3, "cycle continuation hits: {hits}/4");
    }

    #[test]
    fn transformer_learns_periodic_sequence() {
        let (out, _, _) = train_on_cycle(Arch::Transformer, 40);
        let first = out.loss_curve[0];
        let last = *out.loss_curve.last().unwrap();
        assert!(last < 0.25 * first, "{first} -> {last}");
    }

    #[test]
    fn single_batch_memorization() {
        let spec = grid_3x3();
        let user = cyclic_user(1, &cycle_cells(), 8, &spec);
        let train_set = vec![user];
        let mut cfg = ModelConfig::tiny(Arch::Lstm);
        cfg.window_len = 8;
        cfg.stride = 8;
        cfg.epochs = 200;
        let vocab = Vocab::from_train(&spec, &train_set);
        let fenc = FeatureEncoder::fit(&train_set);
        let windows = build_windows(&train_set, cfg.window_len, cfg.stride);
        let schedule =
            plan_sequential(&windows.sample_refs(), cfg.batch_size, cfg.epochs).unwrap();
        let out = train(cfg, &train_set, &windows, &schedule, &fenc, &vocab, None).unwrap();
        assert!(
            *out.loss_curve.last().unwrap() < 0.05,
            "single batch should be memorized, final loss {}",
            out.loss_curve.last().unwrap()
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (a, _, _) = train_on_cycle(Arch::Lstm, 5);
        let (b, _, _) = train_on_cycle(Arch::Lstm, 5);
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.net.params.tensors[0].data, b.net.params.tensors[0].data);
    }

    #[test]
    fn empty_history_yields_no_candidates() {
        let spec = grid_3x3();
        let user = cyclic_user(1, &cycle_cells(), 8, &spec);
        let net = SeqNet::new(
            ModelConfig::tiny(Arch::Lstm),
            Vocab::from_train(&spec, &[user.clone()]),
        );
        let fenc = FeatureEncoder::fit(&[user]);
        let targets = vec![TargetTime {
            day_index: 5,
            day_of_week: 1,
            local_hour: 9,
            minute_of_day: 540,
        }];
        let preds = predict_sequence(&net, &[], &targets, None, &fenc, &spec);
        assert!(preds.is_empty());
    }

    #[test]
    fn bad_schedule_reference_is_an_error() {
        let spec = grid_3x3();
        let user = cyclic_user(1, &cycle_cells(), 16, &spec);
        let train_set = vec![user];
        let cfg = ModelConfig::tiny(Arch::Lstm);
        let vocab = Vocab::from_train(&spec, &train_set);
        let fenc = FeatureEncoder::fit(&train_set);
        let windows = build_windows(&train_set, cfg.window_len, cfg.stride);
        let bogus = vec![crate::sampling::SampleRef {
            user_id: 99,
            window: 0,
        }];
        let schedule = plan_sequential(&bogus, 1, 1).unwrap();
        assert!(!schedule_is_compatible(&windows, &schedule));
        let err = train(cfg, &train_set, &windows, &schedule, &fenc, &vocab, None).unwrap_err();
        assert!(matches!(err, ModelError::UnknownUser(99)));
    }

    #[test]
    fn predictions_align_with_target_times() {
        let spec = grid_3x3();
        let user = cyclic_user(1, &cycle_cells(), 8, &spec);
        let net = SeqNet::new(
            ModelConfig::tiny(Arch::Lstm),
            Vocab::from_train(&spec, &[user.clone()]),
        );
        let fenc = FeatureEncoder::fit(&[user.clone()]);
        let targets: Vec<TargetTime> = vec![
            TargetTime { day_index: 5, day_of_week: 1, local_hour: 8, minute_of_day: 500 },
            TargetTime { day_index: 6, day_of_week: 2, local_hour: 20, minute_of_day: 1230 },
        ];
        let preds = predict_sequence(&net, &user.points, &targets, None, &fenc, &spec);
        assert_eq!(preds.len(), 2);
        for (p, t) in preds.iter().zip(&targets) {
            assert_eq!(p.day_index, t.day_index);
            assert_eq!(p.minute_of_day, t.minute_of_day);
            assert!(p.score > 0.0 && p.score <= 1.0);
            assert_eq!(p.source, CandidateSource::Model);
        }
    }
}
