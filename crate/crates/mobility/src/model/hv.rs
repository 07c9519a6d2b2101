//! Historical-visit baseline: replay the most recent training day with the
//! target's weekday, aligning each target timestamp to the nearest
//! time-of-day on that day.

use super::{CandidateSource, PredictionCandidate, TargetTime};
use crate::features::EnrichedPoint;
use crate::grid::{centroid_of, GridSpec};

/// One candidate per target. Preference order per target: latest train day
/// sharing the target's weekday, else the latest train day of any weekday.
/// No training history yields no candidates (user skipped).
pub fn hv_predict(
    train_points: &[EnrichedPoint],
    targets: &[TargetTime],
    spec: &GridSpec,
) -> Vec<PredictionCandidate> {
    if train_points.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(targets.len());
    for t in targets {
        let day = latest_day_matching(train_points, |p| p.day_of_week == t.day_of_week)
            .or_else(|| latest_day_matching(train_points, |_| true))
            .expect("non-empty train points");
        let p = nearest_in_day(train_points, day, t.minute_of_day);
        let (lat, lon) = centroid_of(p.cell, spec);
        out.push(PredictionCandidate {
            cell: p.cell,
            lat,
            lon,
            day_index: t.day_index,
            minute_of_day: t.minute_of_day,
            score: 1.0,
            source: CandidateSource::Historical,
        });
    }
    out
}

fn latest_day_matching<F: Fn(&EnrichedPoint) -> bool>(
    points: &[EnrichedPoint],
    accept: F,
) -> Option<i64> {
    points
        .iter()
        .filter(|p| accept(p))
        .map(|p| p.day_index)
        .max()
}

/// The point on `day` whose minute-of-day is closest to `minute`; earlier
/// point wins ties.
fn nearest_in_day(points: &[EnrichedPoint], day: i64, minute: u32) -> &EnrichedPoint {
    points
        .iter()
        .filter(|p| p.day_index == day)
        .min_by_key(|p| {
            let d = (p.minute_of_day as i64 - minute as i64).abs();
            (d, p.minute_of_day)
        })
        .expect("day selected from the same point set")
}
