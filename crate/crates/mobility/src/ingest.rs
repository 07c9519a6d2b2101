//! Check-in file parsing, trajectory assembly, and dataset statistics.
//!
//! Input files follow the eight-column Foursquare check-in layout
//! (`user_id`, `venue_id`, `venue_category_id`, `venue_category_name`,
//! `lat`, `lon`, `tz_offset_minutes`, `utc_time`), tab- or comma-delimited.

use std::collections::HashMap;
use std::io::BufRead;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{malformed} of {total} rows malformed (> {max_frac:.1}% allowed); first: line {first_line}: {first_msg}")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        max_frac: f64,
        first_line: usize,
        first_msg: String,
    },
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// One timestamped, venue-annotated observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user_id: u64,
    pub venue_id: String,
    pub venue_category_id: String,
    pub venue_category_name: String,
    pub lat: f64,
    pub lon: f64,
    /// Offset from UTC in minutes, signed.
    pub tz_offset: i32,
    pub utc_time: DateTime<Utc>,
    /// `utc_time` shifted by `tz_offset` minutes.
    pub local_time: DateTime<FixedOffset>,
}

impl CheckIn {
    pub fn local_hour(&self) -> u32 {
        self.local_time.hour()
    }

    /// Monday = 0 .. Sunday = 6, in local time.
    pub fn local_weekday(&self) -> u32 {
        self.local_time.weekday().num_days_from_monday()
    }
}

/// A per-user, time-ordered sequence of check-ins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: u64,
    pub points: Vec<CheckIn>,
}

/// Column order of the input file; indices into the delimited row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub delimiter: char,
    pub user_id: usize,
    pub venue_id: usize,
    pub venue_category_id: usize,
    pub venue_category_name: usize,
    pub lat: usize,
    pub lon: usize,
    pub tz_offset: usize,
    pub utc_time: usize,
}

impl ColumnSchema {
    /// The published Foursquare TSV layout.
    pub fn foursquare_tsv() -> Self {
        Self {
            delimiter: '\t',
            user_id: 0,
            venue_id: 1,
            venue_category_id: 2,
            venue_category_name: 3,
            lat: 4,
            lon: 5,
            tz_offset: 6,
            utc_time: 7,
        }
    }

    /// Same column order, comma-delimited.
    pub fn foursquare_csv() -> Self {
        Self {
            delimiter: ',',
            ..Self::foursquare_tsv()
        }
    }
}

/// A skipped row, kept for the parse report.
#[derive(Debug, Clone, Serialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub checkins: Vec<CheckIn>,
    pub row_errors: Vec<RowError>,
}

const MAX_MALFORMED_FRAC: f64 = 0.01;

/// Parse delimited check-in rows. Malformed rows are collected and reported;
/// the run fails only if more than 1% of rows are malformed.
pub fn parse_checkins<R: BufRead>(
    source: R,
    schema: &ColumnSchema,
) -> Result<ParseOutcome, IngestError> {
    let mut checkins = Vec::new();
    let mut row_errors = Vec::new();
    let mut total = 0usize;

    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_row(&line, schema) {
            Ok(ci) => checkins.push(ci),
            Err(msg) => row_errors.push(RowError {
                line: idx + 1,
                message: msg,
            }),
        }
    }

    if total > 0 && (row_errors.len() as f64) / (total as f64) > MAX_MALFORMED_FRAC {
        let first = &row_errors[0];
        return Err(IngestError::TooManyMalformed {
            malformed: row_errors.len(),
            total,
            max_frac: MAX_MALFORMED_FRAC * 100.0,
            first_line: first.line,
            first_msg: first.message.clone(),
        });
    }

    Ok(ParseOutcome {
        checkins,
        row_errors,
    })
}

fn parse_row(line: &str, schema: &ColumnSchema) -> Result<CheckIn, String> {
    let fields: Vec<&str> = line.split(schema.delimiter).map(str::trim).collect();
    let need = [
        schema.user_id,
        schema.venue_id,
        schema.venue_category_id,
        schema.venue_category_name,
        schema.lat,
        schema.lon,
        schema.tz_offset,
        schema.utc_time,
    ]
    .into_iter()
    .max()
    .unwrap();
    if fields.len() <= need {
        return Err(format!("expected at least {} columns, got {}", need + 1, fields.len()));
    }

    let user_id: u64 = fields[schema.user_id]
        .parse()
        .map_err(|_| format!("bad user_id {:?}", fields[schema.user_id]))?;
    let lat: f64 = fields[schema.lat]
        .parse()
        .map_err(|_| format!("bad lat {:?}", fields[schema.lat]))?;
    let lon: f64 = fields[schema.lon]
        .parse()
        .map_err(|_| format!("bad lon {:?}", fields[schema.lon]))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat {lat} outside [-90, 90]"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon {lon} outside [-180, 180]"));
    }
    let tz_offset: i32 = fields[schema.tz_offset]
        .parse()
        .map_err(|_| format!("bad tz_offset {:?}", fields[schema.tz_offset]))?;
    let category = fields[schema.venue_category_name].to_string();
    if category.is_empty() {
        return Err("empty venue category name".into());
    }
    let utc_time = parse_timestamp(fields[schema.utc_time])?;
    let offset = FixedOffset::east_opt(tz_offset * 60)
        .ok_or_else(|| format!("tz_offset {tz_offset} out of range"))?;
    let local_time = utc_time.with_timezone(&offset);

    Ok(CheckIn {
        user_id,
        venue_id: fields[schema.venue_id].to_string(),
        venue_category_id: fields[schema.venue_category_id].to_string(),
        venue_category_name: category,
        lat,
        lon,
        tz_offset,
        utc_time,
        local_time,
    })
}

/// Accepts the Foursquare textual UTC format ("Tue Apr 03 18:17:18 +0000 2012")
/// and ISO-8601; rejects anything else.
fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(dt) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Ok(dt.with_timezone(&Utc));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(Utc.from_utc_datetime(&naive));
    }
    Err(format!("unrecognized timestamp {s:?}"))
}

/// Group check-ins by user and sort each group by local time.
/// The sort is stable, so equal timestamps keep file order.
pub fn build_trajectories(checkins: &[CheckIn]) -> Vec<Trajectory> {
    let mut by_user: HashMap<u64, Vec<CheckIn>> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    for ci in checkins {
        let entry = by_user.entry(ci.user_id).or_default();
        if entry.is_empty() {
            order.push(ci.user_id);
        }
        entry.push(ci.clone());
    }
    order
        .into_iter()
        .map(|user_id| {
            let mut points = by_user.remove(&user_id).unwrap();
            points.sort_by_key(|p| p.local_time);
            Trajectory { user_id, points }
        })
        .collect()
}

/// Repeat Check-in Ratio: (total - unique) / total, uniqueness keyed on venue_id.
pub fn compute_rcr(t: &Trajectory) -> Result<f64, IngestError> {
    if t.points.is_empty() {
        return Err(IngestError::EmptyTrajectory);
    }
    let total = t.points.len();
    let unique: std::collections::HashSet<&str> =
        t.points.iter().map(|p| p.venue_id.as_str()).collect();
    Ok((total - unique.len()) as f64 / total as f64)
}

/// Descriptive statistics of a check-in dataset, keyed on local time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_checkins: usize,
    pub user_count: usize,
    pub hourly_histogram: [u64; 24],
    pub weekday_histogram: [u64; 7],
    /// (category name, count), descending by count.
    pub top_categories: Vec<(String, u64)>,
    pub per_user_rcr: std::collections::BTreeMap<u64, f64>,
}

pub fn dataset_stats(trajectories: &[Trajectory], top_n: usize) -> DatasetStats {
    let mut hourly = [0u64; 24];
    let mut weekday = [0u64; 7];
    let mut categories: HashMap<&str, u64> = HashMap::new();
    let mut per_user_rcr = std::collections::BTreeMap::new();
    let mut total = 0usize;

    for t in trajectories {
        for p in &t.points {
            total += 1;
            hourly[p.local_hour() as usize] += 1;
            weekday[p.local_weekday() as usize] += 1;
            *categories.entry(p.venue_category_name.as_str()).or_insert(0) += 1;
        }
        if let Ok(rcr) = compute_rcr(t) {
            per_user_rcr.insert(t.user_id, rcr);
        }
    }

    let mut top: Vec<(String, u64)> = categories
        .into_iter()
        .map(|(name, count)| (name.to_string(), count))
        .collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(top_n);

    DatasetStats {
        total_checkins: total,
        user_count: trajectories.len(),
        hourly_histogram: hourly,
        weekday_histogram: weekday,
        top_categories: top,
        per_user_rcr,
    }
}
