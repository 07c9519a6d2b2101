//! Uniform spatial discretization of a city extent into a rows x cols cell grid.
//!
//! Row 0 sits at `lat_min` (south). Cell flat ids double as model vocabulary
//! tokens, so the spec is persisted with experiment outputs to keep
//! evaluations reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::haversine;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("need at least two distinct points to build a grid")]
    DegenerateBbox,
    #[error("point ({lat}, {lon}) outside grid bbox")]
    OutOfBbox { lat: f64, lon: f64 },
    #[error("rows and cols must be >= 1")]
    BadShape,
}

pub const DEFAULT_ROWS: usize = 200;
pub const DEFAULT_COLS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
    /// Metric cell extent measured at bbox mid-latitude.
    pub cell_height_m: f64,
    pub cell_width_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn flat(&self, spec: &GridSpec) -> usize {
        self.row * spec.cols + self.col
    }

    pub fn from_flat(flat: usize, spec: &GridSpec) -> CellId {
        CellId {
            row: flat / spec.cols,
            col: flat % spec.cols,
        }
    }
}

// Expansion applied to the max edges so extreme points bin inside the grid.
const EDGE_EPS: f64 = 1e-9;

pub fn build_grid(points: &[(f64, f64)], rows: usize, cols: usize) -> Result<GridSpec, GridError> {
    if rows < 1 || cols < 1 {
        return Err(GridError::BadShape);
    }
    let mut it = points.iter();
    let first = it.next().ok_or(GridError::DegenerateBbox)?;
    let (mut lat_min, mut lat_max) = (first.0, first.0);
    let (mut lon_min, mut lon_max) = (first.1, first.1);
    for &(lat, lon) in it {
        lat_min = lat_min.min(lat);
        lat_max = lat_max.max(lat);
        lon_min = lon_min.min(lon);
        lon_max = lon_max.max(lon);
    }
    if lat_min == lat_max && lon_min == lon_max {
        return Err(GridError::DegenerateBbox);
    }
    lat_max += EDGE_EPS;
    lon_max += EDGE_EPS;

    let mid_lat = 0.5 * (lat_min + lat_max);
    let height_total = haversine((lat_min, mid_lat_lon(lon_min, lon_max)), (lat_max, mid_lat_lon(lon_min, lon_max)));
    let width_total = haversine((mid_lat, lon_min), (mid_lat, lon_max));

    Ok(GridSpec {
        lat_min,
        lat_max,
        lon_min,
        lon_max,
        rows,
        cols,
        cell_height_m: height_total / rows as f64,
        cell_width_m: width_total / cols as f64,
    })
}

fn mid_lat_lon(lo: f64, hi: f64) -> f64 {
    0.5 * (lo + hi)
}

/// Uniform linear binning; points on the (expanded) max edge land in the last bin.
pub fn cell_of(lat: f64, lon: f64, spec: &GridSpec) -> Result<CellId, GridError> {
    if lat < spec.lat_min || lat > spec.lat_max || lon < spec.lon_min || lon > spec.lon_max {
        return Err(GridError::OutOfBbox { lat, lon });
    }
    let fr = (lat - spec.lat_min) / (spec.lat_max - spec.lat_min) * spec.rows as f64;
    let fc = (lon - spec.lon_min) / (spec.lon_max - spec.lon_min) * spec.cols as f64;
    let row = (fr as usize).min(spec.rows - 1);
    let col = (fc as usize).min(spec.cols - 1);
    Ok(CellId { row, col })
}

/// Geometric center of the cell rectangle.
pub fn centroid_of(cell: CellId, spec: &GridSpec) -> (f64, f64) {
    let dlat = (spec.lat_max - spec.lat_min) / spec.rows as f64;
    let dlon = (spec.lon_max - spec.lon_min) / spec.cols as f64;
    (
        spec.lat_min + (cell.row as f64 + 0.5) * dlat,
        spec.lon_min + (cell.col as f64 + 0.5) * dlon,
    )
}
