//! The trajectory generation stage: per-point feature enrichment and the
//! temporal train/test split.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::grid::{cell_of, CellId, GridSpec};
use crate::ingest::Trajectory;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters between two (lat, lon) points.
pub fn haversine(p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let (lat1, lon1) = (p1.0.to_radians(), p1.1.to_radians());
    let (lat2, lon2) = (p2.0.to_radians(), p2.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().atan2((1.0 - a).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeSegment {
    Rush,
    OffPeak,
}

/// Rush covers [07:00, 23:00); off-peak covers 23:00 and [00:00, 07:00).
/// Every hour gets a label.
pub fn time_segment(local_hour: u32) -> TimeSegment {
    if (7..23).contains(&local_hour) {
        TimeSegment::Rush
    } else {
        TimeSegment::OffPeak
    }
}

/// A check-in augmented with the comparative feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedPoint {
    pub cell: CellId,
    pub lat: f64,
    pub lon: f64,
    /// Days since the dataset's first local-time date.
    pub day_index: i64,
    /// Monday = 0 .. Sunday = 6.
    pub day_of_week: u32,
    pub local_hour: u32,
    pub minute_of_day: u32,
    pub time_segment: TimeSegment,
    /// Meters from the previous kept point; 0 for the first.
    pub travel_distance_m: f64,
    /// Minutes since the previous kept check-in; 0 for the first.
    pub duration_min: f64,
    pub category_id: String,
    pub category_name: String,
    pub venue_id: String,
}

impl EnrichedPoint {
    /// (weekday, hour) pair used for temporal alignment.
    pub fn time_slot(&self) -> (u32, u32) {
        (self.day_of_week, self.local_hour)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedTrajectory {
    pub user_id: u64,
    pub points: Vec<EnrichedPoint>,
    /// Points rejected because they fell outside the frozen grid bbox.
    pub dropped_out_of_bbox: usize,
}

/// Enrich a time-sorted trajectory. Out-of-bbox points are dropped and
/// counted; distance/duration chain over the kept points.
pub fn enrich(t: &Trajectory, spec: &GridSpec, epoch_day0: NaiveDate) -> EnrichedTrajectory {
    let mut points = Vec::with_capacity(t.points.len());
    let mut dropped = 0usize;
    let mut prev: Option<(f64, f64, chrono::DateTime<chrono::FixedOffset>)> = None;

    for p in &t.points {
        let cell = match cell_of(p.lat, p.lon, spec) {
            Ok(c) => c,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let local_date = p.local_time.date_naive();
        let day_index = (local_date - epoch_day0).num_days();
        let hour = p.local_hour();
        let (dist, dur) = match prev {
            Some((plat, plon, ptime)) => (
                haversine((plat, plon), (p.lat, p.lon)),
                (p.local_time - ptime).num_seconds() as f64 / 60.0,
            ),
            None => (0.0, 0.0),
        };
        use chrono::Timelike;
        points.push(EnrichedPoint {
            cell,
            lat: p.lat,
            lon: p.lon,
            day_index,
            day_of_week: p.local_weekday(),
            local_hour: hour,
            minute_of_day: hour * 60 + p.local_time.minute(),
            time_segment: time_segment(hour),
            travel_distance_m: dist,
            duration_min: dur,
            category_id: p.venue_category_id.clone(),
            category_name: p.venue_category_name.clone(),
            venue_id: p.venue_id.clone(),
        });
        prev = Some((p.lat, p.lon, p.local_time));
    }

    EnrichedTrajectory {
        user_id: t.user_id,
        points,
        dropped_out_of_bbox: dropped,
    }
}

/// Earliest local-time date across all trajectories; the day-0 anchor.
pub fn earliest_local_date(trajectories: &[Trajectory]) -> Option<NaiveDate> {
    trajectories
        .iter()
        .flat_map(|t| t.points.iter())
        .map(|p| p.local_time.date_naive())
        .min()
}

pub const DEFAULT_T_SPLIT: i64 = 250;
pub const DEFAULT_WINDOW_DAYS: i64 = 300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDataset {
    /// Per-user points restricted to days [0, t_split).
    pub train: Vec<EnrichedTrajectory>,
    /// Per-user points restricted to days [t_split, window_days).
    pub test: Vec<EnrichedTrajectory>,
    pub t_split: i64,
    pub window_days: i64,
    /// Users with an empty train or empty test side; retained but skipped
    /// by history-dependent predictors at evaluation time.
    pub flagged_users: Vec<u64>,
    /// Points outside [0, window_days), dropped.
    pub dropped_out_of_window: usize,
}

impl SplitDataset {
    pub fn in_window_points(&self) -> usize {
        self.train.iter().map(|t| t.points.len()).sum::<usize>()
            + self.test.iter().map(|t| t.points.len()).sum::<usize>()
    }
}

/// Partition enriched trajectories at the day boundary: day <= t_split - 1
/// trains, day t_split is the first test day. Points beyond the evaluation
/// window are dropped and counted.
pub fn temporal_split(
    trajectories: &[EnrichedTrajectory],
    t_split: i64,
    window_days: i64,
) -> SplitDataset {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut flagged = Vec::new();
    let mut dropped = 0usize;

    for t in trajectories {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for p in &t.points {
            if p.day_index < 0 || p.day_index >= window_days {
                dropped += 1;
            } else if p.day_index < t_split {
                tr.push(p.clone());
            } else {
                te.push(p.clone());
            }
        }
        if tr.is_empty() || te.is_empty() {
            flagged.push(t.user_id);
        }
        train.push(EnrichedTrajectory {
            user_id: t.user_id,
            points: tr,
            dropped_out_of_bbox: t.dropped_out_of_bbox,
        });
        test.push(EnrichedTrajectory {
            user_id: t.user_id,
            points: te,
            dropped_out_of_bbox: 0,
        });
    }

    SplitDataset {
        train,
        test,
        t_split,
        window_days,
        flagged_users: flagged,
        dropped_out_of_window: dropped,
    }
}

/// Column order of the enriched columnar text format (tab-separated, one
/// point per line, header first).
pub const ENRICHED_HEADER: &str = "user_id\trow\tcol\tlat\tlon\tday_index\tday_of_week\tlocal_hour\tminute_of_day\tsegment\ttravel_distance_m\tduration_min\tcategory_id\tcategory_name\tvenue_id";

pub fn write_enriched<W: std::io::Write>(
    mut w: W,
    trajectories: &[EnrichedTrajectory],
) -> std::io::Result<()> {
    writeln!(w, "{ENRICHED_HEADER}")?;
    for t in trajectories {
        for p in &t.points {
            let seg = match p.time_segment {
                TimeSegment::Rush => "rush",
                TimeSegment::OffPeak => "offpeak",
            };
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{seg}\t{}\t{}\t{}\t{}\t{}",
                t.user_id,
                p.cell.row,
                p.cell.col,
                p.lat,
                p.lon,
                p.day_index,
                p.day_of_week,
                p.local_hour,
                p.minute_of_day,
                p.travel_distance_m,
                p.duration_min,
                p.category_id,
                p.category_name,
                p.venue_id,
            )?;
        }
    }
    Ok(())
}

/// Inverse of [`write_enriched`]. Users come back in first-appearance
/// order; the out-of-bbox drop counter is not persisted and reads as 0.
pub fn read_enriched<R: std::io::BufRead>(r: R) -> std::io::Result<Vec<EnrichedTrajectory>> {
    use std::io::{Error, ErrorKind};
    let bad = |line: usize, msg: &str| Error::new(ErrorKind::InvalidData, format!("line {line}: {msg}"));
    let mut order: Vec<u64> = Vec::new();
    let mut by_user: std::collections::HashMap<u64, Vec<EnrichedPoint>> =
        std::collections::HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != ENRICHED_HEADER {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 15 {
            return Err(bad(i + 1, "expected 15 columns"));
        }
        let parse = |s: &str, what: &str| -> Result<f64, Error> {
            s.parse().map_err(|_| bad(i + 1, what))
        };
        let user_id: u64 = cols[0].parse().map_err(|_| bad(i + 1, "user_id"))?;
        let segment = match cols[9] {
            "rush" => TimeSegment::Rush,
            "offpeak" => TimeSegment::OffPeak,
            _ => return Err(bad(i + 1, "segment")),
        };
        let p = EnrichedPoint {
            cell: CellId {
                row: cols[1].parse().map_err(|_| bad(i + 1, "row"))?,
                col: cols[2].parse().map_err(|_| bad(i + 1, "col"))?,
            },
            lat: parse(cols[3], "lat")?,
            lon: parse(cols[4], "lon")?,
            day_index: cols[5].parse().map_err(|_| bad(i + 1, "day_index"))?,
            day_of_week: cols[6].parse().map_err(|_| bad(i + 1, "day_of_week"))?,
            local_hour: cols[7].parse().map_err(|_| bad(i + 1, "local_hour"))?,
            minute_of_day: cols[8].parse().map_err(|_| bad(i + 1, "minute_of_day"))?,
            time_segment: segment,
            travel_distance_m: parse(cols[10], "travel_distance_m")?,
            duration_min: parse(cols[11], "duration_min")?,
            category_id: cols[12].to_string(),
            category_name: cols[13].to_string(),
            venue_id: cols[14].to_string(),
        };
        if !by_user.contains_key(&user_id) {
            order.push(user_id);
        }
        by_user.entry(user_id).or_default().push(p);
    }
    Ok(order
        .into_iter()
        .map(|user_id| EnrichedTrajectory {
            user_id,
            points: by_user.remove(&user_id).unwrap(),
            dropped_out_of_bbox: 0,
        })
        .collect())
}
