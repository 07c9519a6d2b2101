//! Build a uniform grid over a set of coordinates and map points to cells.
//!
//! Run: cargo run --example grid_cells

use mobility::grid::{build_grid, cell_of, centroid_of, CellId};

fn main() -> anyhow::Result<()> {
    // Manhattan-ish extent
    let points = [(40.70, -74.02), (40.88, -73.91)];
    let spec = build_grid(&points, 200, 200)?;
    println!(
        "grid {}x{} over [{:.3}, {:.3}] x [{:.3}, {:.3}]",
        spec.rows, spec.cols, spec.lat_min, spec.lat_max, spec.lon_min, spec.lon_max
    );
    println!(
        "cell size: {:.1} m x {:.1} m",
        spec.cell_height_m, spec.cell_width_m
    );

    for (lat, lon) in [(40.7128, -74.0060), (40.7484, -73.9857), (40.8296, -73.9262)] {
        let cell = cell_of(lat, lon, &spec)?;
        let (clat, clon) = centroid_of(cell, &spec);
        println!(
            "({lat:.4}, {lon:.4}) -> cell ({}, {}) = token {} with centroid ({clat:.4}, {clon:.4})",
            cell.row,
            cell.col,
            cell.flat(&spec)
        );
    }

    let c = CellId { row: 10, col: 42 };
    println!("cell (10, 42) round-trips through flat id {}", c.flat(&spec));
    Ok(())
}
