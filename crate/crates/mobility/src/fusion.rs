//! Historical fusion: a learned gate arbitrating between the sequence
//! model's candidate and a frequency-pooled historical candidate.

use serde::{Deserialize, Serialize};

use crate::features::{haversine, EnrichedPoint};
use crate::grid::{centroid_of, GridSpec};
use crate::model::{
    encode_inputs, CandidateSource, FeatureEncoder, PredictionCandidate, SeqNet, TargetTime,
};
use crate::nn::{Adam, AdamConfig, ParamSet, Tape, Tensor};

/// Most-visited cell for the target's (weekday, hour) slot, with fallbacks:
/// same hour on any weekday, then the globally modal cell. Ties go to the
/// cell seen most recently. Empty history yields no candidate.
pub fn historical_candidate(
    train_points: &[EnrichedPoint],
    target: &TargetTime,
    spec: &GridSpec,
) -> Option<PredictionCandidate> {
    let slot = |p: &&EnrichedPoint| {
        p.day_of_week == target.day_of_week && p.local_hour == target.local_hour
    };
    let hour = |p: &&EnrichedPoint| p.local_hour == target.local_hour;
    let any = |_: &&EnrichedPoint| true;
    let pool = [
        pooled_cell(train_points, slot),
        pooled_cell(train_points, hour),
        pooled_cell(train_points, any),
    ]
    .into_iter()
    .flatten()
    .next()?;

    let (cell, count, total) = pool;
    let (lat, lon) = centroid_of(cell, spec);
    Some(PredictionCandidate {
        cell,
        lat,
        lon,
        day_index: target.day_index,
        minute_of_day: target.minute_of_day,
        score: count as f64 / total as f64,
        source: CandidateSource::Historical,
    })
}

/// Modal cell among points matching the filter; ties break to the cell
/// whose latest matching visit is most recent. Returns (cell, count, total).
fn pooled_cell<F: Fn(&&EnrichedPoint) -> bool>(
    points: &[EnrichedPoint],
    accept: F,
) -> Option<(crate::grid::CellId, usize, usize)> {
    use std::collections::HashMap;
    let mut counts: HashMap<crate::grid::CellId, (usize, usize)> = HashMap::new();
    let mut total = 0usize;
    for (i, p) in points.iter().enumerate() {
        if !accept(&p) {
            continue;
        }
        let e = counts.entry(p.cell).or_insert((0, 0));
        e.0 += 1;
        e.1 = i; // latest index
        total += 1;
    }
    counts
        .into_iter()
        .max_by_key(|(_, (count, latest))| (*count, *latest))
        .map(|(cell, (count, _))| (cell, count, total))
}

/// Linear gate over the concatenated cell embeddings of the two candidates;
/// sigmoid output above 0.5 selects the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionGate {
    pub params: ParamSet,
    pub input_dim: usize,
}

pub const GATE_LR: f64 = 1e-3;
pub const GATE_EPOCHS: usize = 5;
/// Fraction of train days held out as gate supervision.
pub const GATE_HOLDOUT_FRAC: f64 = 0.1;

impl FusionGate {
    pub fn new(input_dim: usize) -> Self {
        let mut params = ParamSet::new();
        params.add("gate.w", Tensor::zeros(input_dim, 1));
        params.add("gate.b", Tensor::zeros(1, 1));
        FusionGate { params, input_dim }
    }

    pub fn prob_model(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.input_dim);
        let w = &self.params.tensors[0];
        let b = self.params.tensors[1].data[0];
        let z: f64 = x.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>() + b;
        1.0 / (1.0 + (-z).exp())
    }

    pub fn select<'a>(
        &self,
        x: &[f64],
        model: &'a PredictionCandidate,
        historical: &'a PredictionCandidate,
    ) -> &'a PredictionCandidate {
        if self.prob_model(x) > 0.5 {
            model
        } else {
            historical
        }
    }
}

/// Gate input: model-candidate embedding followed by historical-candidate
/// embedding, both from the trained model's cell table.
pub fn gate_input(net: &SeqNet, model_token: usize, hist_token: usize) -> Vec<f64> {
    let mut x = net.cell_embedding(model_token).to_vec();
    x.extend_from_slice(net.cell_embedding(hist_token));
    x
}

#[derive(Debug, Clone)]
pub struct GateExample {
    pub x: Vec<f64>,
    /// 1.0 when the model candidate was at least as close to the truth.
    pub label: f64,
}

/// Build supervision from the tail of each user's training days: replay the
/// held-out points teacher-forced and label which source was nearer.
pub fn gate_examples(
    net: &SeqNet,
    train_points: &[EnrichedPoint],
    profile: Option<&[f64]>,
    fenc: &FeatureEncoder,
    spec: &GridSpec,
) -> Vec<GateExample> {
    let mut days: Vec<i64> = train_points.iter().map(|p| p.day_index).collect();
    days.sort_unstable();
    days.dedup();
    if days.len() < 2 {
        return Vec::new();
    }
    let holdout_days = ((days.len() as f64 * GATE_HOLDOUT_FRAC).ceil() as usize).max(1);
    let cut = days[days.len() - holdout_days];
    let split = train_points.partition_point(|p| p.day_index < cut);
    if split == 0 {
        return Vec::new();
    }

    let mut out = Vec::new();
    for i in split..train_points.len() {
        let truth = &train_points[i];
        let ctx = &train_points[..i];
        let target = TargetTime::of_point(truth);
        let hist = match historical_candidate(ctx, &target, spec) {
            Some(h) => h,
            None => continue,
        };
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
        let (model_token, _) = net.argmax_next(&w);
        let model_cell = net.vocab.cell_of_token(model_token).unwrap();
        let (mlat, mlon) = centroid_of(model_cell, spec);
        let d_model = haversine((mlat, mlon), (truth.lat, truth.lon));
        let d_hist = haversine((hist.lat, hist.lon), (truth.lat, truth.lon));
        out.push(GateExample {
            x: gate_input(net, model_token, net.vocab.token_of(hist.cell)),
            label: if d_model <= d_hist { 1.0 } else { 0.0 },
        });
    }
    out
}

/// Full-batch BCE training of the gate. Returns the per-epoch loss curve.
pub fn train_gate(
    examples: &[GateExample],
    input_dim: usize,
    lr: f64,
    epochs: usize,
) -> (FusionGate, Vec<f64>) {
    let mut gate = FusionGate::new(input_dim);
    if examples.is_empty() {
        return (gate, Vec::new());
    }
    let mut x = Tensor::zeros(examples.len(), input_dim);
    let mut labels = Vec::with_capacity(examples.len());
    for (r, e) in examples.iter().enumerate() {
        assert_eq!(e.x.len(), input_dim);
        x.data[r * input_dim..(r + 1) * input_dim].copy_from_slice(&e.x);
        labels.push(e.label);
    }
    let mut opt = Adam::new(AdamConfig::with_lr(lr), &gate.params);
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.param(gate.params.tensors[0].clone(), 0);
        let b = tape.param(gate.params.tensors[1].clone(), 1);
        let logits = tape.matmul(xv, w);
        let logits = tape.add_row_broadcast(logits, b);
        let loss = tape.bce_with_logits_mean(logits, &labels);
        curve.push(tape.scalar(loss));
        let grads = tape.backward(loss, &gate.params.shapes());
        opt.step(&mut gate.params, &grads);
    }
    (gate, curve)
}

/// Autoregressive fused decode: at each target the gate picks between the
/// model's candidate and the historical one; the winner feeds back into the
/// model context.
pub fn fused_predict(
    net: &SeqNet,
    gate: &FusionGate,
    history: &[EnrichedPoint],
    targets: &[TargetTime],
    profile: Option<&[f64]>,
    fenc: &FeatureEncoder,
    spec: &GridSpec,
) -> Vec<PredictionCandidate> {
    if history.is_empty() {
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
        let (model_token, score) = net.argmax_next(&w);
        let model_cell = net.vocab.cell_of_token(model_token).unwrap();
        let (mlat, mlon) = centroid_of(model_cell, spec);
        let model_cand = PredictionCandidate {
            cell: model_cell,
            lat: mlat,
            lon: mlon,
            day_index: t.day_index,
            minute_of_day: t.minute_of_day,
            score,
            source: CandidateSource::Model,
        };
        // Historical pooling stays on the true training history.
        let chosen = match historical_candidate(history, t, spec) {
            Some(hist) => {
                let x = gate_input(net, model_token, net.vocab.token_of(hist.cell));
                gate.select(&x, &model_cand, &hist).clone()
            }
            None => model_cand,
        };
        let prev = ctx.last().unwrap();
        let dist = haversine((prev.lat, prev.lon), (chosen.lat, chosen.lon));
        let dur = ((t.day_index * 1440 + t.minute_of_day as i64)
            - (prev.day_index * 1440 + prev.minute_of_day as i64))
            .max(0) as f64;
        ctx.push(EnrichedPoint {
            cell: chosen.cell,
            lat: chosen.lat,
            lon: chosen.lon,
            day_index: t.day_index,
            day_of_week: t.day_of_week,
            local_hour: t.local_hour,
            minute_of_day: t.minute_of_day,
            time_segment: crate::features::time_segment(t.local_hour),
            travel_distance_m: dist,
            duration_min: dur,
            category_id: String::new(),
            category_name: String::new(),
            venue_id: String::new(),
        });
        out.push(chosen);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::time_segment;
    use crate::grid::{build_grid, CellId};
    use crate::model::{Arch, ModelConfig, Vocab};

    fn spec() -> GridSpec {
        build_grid(&[(35.0, 139.0), (36.0, 140.0)], 4, 4).unwrap()
    }

    fn point(cell: CellId, day: i64, minute: u32, spec: &GridSpec) -> EnrichedPoint {
        let hour = minute / 60;
        let (lat, lon) = centroid_of(cell, spec);
        EnrichedPoint {
            cell,
            lat,
            lon,
            day_index: day,
            day_of_week: (day.rem_euclid(7)) as u32,
            local_hour: hour,
            minute_of_day: minute,
            time_segment: time_segment(hour),
            travel_distance_m: 0.0,
            duration_min: 0.0,
            category_id: "c".into(),
            category_name: "Park".into(),
            venue_id: "v".into(),
        }
    }

    fn target(day: i64, minute: u32) -> TargetTime {
        TargetTime {
            day_index: day,
            day_of_week: (day.rem_euclid(7)) as u32,
            local_hour: minute / 60,
            minute_of_day: minute,
        }
    }

    #[test]
    fn slot_max_pool_picks_most_frequent() {
        let s = spec();
        // weekday 0 (days 0, 7, 14), 09:00 slot: cell (1,1) twice, (2,2) once
        let train = vec![
            point(CellId { row: 1, col: 1 }, 0, 540, &s),
            point(CellId { row: 2, col: 2 }, 7, 540, &s),
            point(CellId { row: 1, col: 1 }, 14, 540, &s),
            point(CellId { row: 3, col: 3 }, 1, 540, &s), // other weekday
        ];
        let c = historical_candidate(&train, &target(21, 540), &s).unwrap();
        assert_eq!(c.cell, CellId { row: 1, col: 1 });
        assert!((c.score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_to_most_recent() {
        let s = spec();
        let train = vec![
            point(CellId { row: 1, col: 1 }, 0, 540, &s),
            point(CellId { row: 2, col: 2 }, 7, 540, &s),
        ];
        let c = historical_candidate(&train, &target(14, 540), &s).unwrap();
        assert_eq!(c.cell, CellId { row: 2, col: 2 });
    }

    #[test]
    fn falls_back_to_same_hour_then_modal() {
        let s = spec();
        // No weekday-0 09:00 data; weekday-3 09:00 exists -> same-hour pool.
        let train = vec![
            point(CellId { row: 0, col: 3 }, 3, 540, &s),
            point(CellId { row: 2, col: 0 }, 4, 600, &s),
        ];
        let c = historical_candidate(&train, &target(7, 540), &s).unwrap();
        assert_eq!(c.cell, CellId { row: 0, col: 3 });
        // No 11:00 data anywhere -> global modal (most recent on tie).
        let c = historical_candidate(&train, &target(7, 660), &s).unwrap();
        assert_eq!(c.cell, CellId { row: 2, col: 0 });
        assert!(historical_candidate(&[], &target(7, 540), &s).is_none());
    }

    #[test]
    fn new_gate_is_indifferent() {
        let gate = FusionGate::new(6);
        assert_eq!(gate.prob_model(&[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]), 0.5);
    }

    #[test]
    fn gate_learns_separable_labels() {
        // Label is the sign of the first coordinate: linearly separable.
        let examples: Vec<GateExample> = (0..40)
            .map(|i| {
                let v = if i % 2 == 0 { 1.0 } else { -1.0 };
                GateExample {
                    x: vec![v, 0.3 * v],
                    label: if v > 0.0 { 1.0 } else { 0.0 },
                }
            })
            .collect();
        let (gate, curve) = train_gate(&examples, 2, 0.1, 200);
        assert!(curve.last().unwrap() < &0.1, "final loss {}", curve.last().unwrap());
        assert!(gate.prob_model(&[1.0, 0.3]) > 0.9);
        assert!(gate.prob_model(&[-1.0, -0.3]) < 0.1);
    }

    #[test]
    fn gate_epoch_curve_descends() {
        let examples = vec![
            GateExample { x: vec![2.0, 0.0], label: 1.0 },
            GateExample { x: vec![-2.0, 0.0], label: 0.0 },
        ];
        let (_, curve) = train_gate(&examples, 2, GATE_LR, GATE_EPOCHS);
        assert_eq!(curve.len(), GATE_EPOCHS);
        assert!(curve.last().unwrap() < &curve[0]);
    }

    fn habitual_user(s: &GridSpec) -> Vec<EnrichedPoint> {
        // 09:00 always cell (1,1); 18:00 always cell (2,2); 20 days.
        let mut pts = Vec::new();
        for day in 0..20 {
            pts.push(point(CellId { row: 1, col: 1 }, day, 540, s));
            pts.push(point(CellId { row: 2, col: 2 }, day, 1080, s));
        }
        pts
    }

    #[test]
    fn gate_examples_label_nearer_source() {
        let s = spec();
        let train = habitual_user(&s);
        let vocab = Vocab::from_train(
            &s,
            &[crate::features::EnrichedTrajectory {
                user_id: 1,
                points: train.clone(),
                dropped_out_of_bbox: 0,
            }],
        );
        let net = SeqNet::new(ModelConfig::tiny(Arch::Lstm), vocab);
        let fenc = FeatureEncoder::fit(&[]);
        let examples = gate_examples(&net, &train, None, &fenc, &s);
        // last 10% of 20 days = 2 days -> 4 held-out points
        assert_eq!(examples.len(), 4);
        for e in &examples {
            assert_eq!(e.x.len(), 2 * net.config.d_model);
            assert!(e.label == 0.0 || e.label == 1.0);
        }
        // The untrained zero-head model ties everywhere and argmax falls to
        // the smallest seen token, which is cell (1,1). So the 09:00 points
        // tie with the exact historical candidate (label 1, ties prefer the
        // model) and the 18:00 points lose to it (label 0).
        let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn fused_predict_follows_forced_gate() {
        let s = spec();
        let train = habitual_user(&s);
        let vocab = Vocab::from_train(
            &s,
            &[crate::features::EnrichedTrajectory {
                user_id: 1,
                points: train.clone(),
                dropped_out_of_bbox: 0,
            }],
        );
        let net = SeqNet::new(ModelConfig::tiny(Arch::Lstm), vocab);
        let fenc = FeatureEncoder::fit(&[]);
        // Force the gate to the historical side with a large negative bias.
        let mut gate = FusionGate::new(2 * net.config.d_model);
        gate.params.tensors[1].data[0] = -10.0;
        let targets = vec![target(21, 540), target(21, 1080)];
        let preds = fused_predict(&net, &gate, &train, &targets, None, &fenc, &s);
        assert_eq!(preds[0].cell, CellId { row: 1, col: 1 });
        assert_eq!(preds[1].cell, CellId { row: 2, col: 2 });
        assert!(preds.iter().all(|p| p.source == CandidateSource::Historical));
        // And to the model side with a large positive bias.
        gate.params.tensors[1].data[0] = 10.0;
        let preds = fused_predict(&net, &gate, &train, &targets, None, &fenc, &s);
        assert!(preds.iter().all(|p| p.source == CandidateSource::Model));
    }
}
