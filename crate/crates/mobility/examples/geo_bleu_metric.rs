//! GEO-BLEU scoring behavior: identity, decay with distance, and the
//! contrast with exact-cell accuracy.
//!
//! Run: cargo run --example geo_bleu_metric

use mobility::grid::CellId;
use mobility::metrics::{accuracy, geo_bleu, GeoBleuParams};

fn main() -> anyhow::Result<()> {
    let params = GeoBleuParams::default();
    let reference: Vec<(f64, f64)> = (0..6).map(|i| (40.70 + 0.01 * i as f64, -74.0)).collect();

    println!("identical sequences: {:.6}", geo_bleu(&reference, &reference, &params)?);

    for km in [0.1, 0.5, 1.0, 5.0, 20.0] {
        let shifted: Vec<(f64, f64)> = reference
            .iter()
            .map(|p| (p.0, p.1 + km / 85.0)) // ~1 deg lon = 85 km here
            .collect();
        println!(
            "every point shifted {km:>4.1} km: {:.6}",
            geo_bleu(&shifted, &reference, &params)?
        );
    }

    // Accuracy is all-or-nothing per cell; GEO-BLEU degrades smoothly.
    let pred = [CellId { row: 5, col: 5 }, CellId { row: 5, col: 6 }];
    let truth = [CellId { row: 5, col: 5 }, CellId { row: 5, col: 7 }];
    println!("cell accuracy on near-miss: {}", accuracy(&pred, &truth)?);
    Ok(())
}
