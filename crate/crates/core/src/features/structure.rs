//! Block- and building-level built-environment measures.

use crate::geo_core::Block;

/// Mean block area in m²; `(0, true)` when there are no blocks.
pub fn avg_block_area<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> (f64, bool) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in blocks {
        sum += b.area_m2;
        n += 1;
    }
    if n == 0 {
        (0.0, true)
    } else {
        (sum / n as f64, false)
    }
}

/// Population standard deviation of construction years over all buildings;
/// `(0, true)` when there are none.
pub fn building_age_diversity<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> (f64, bool) {
    let years: Vec<f64> = blocks
        .into_iter()
        .flat_map(|b| b.buildings.iter().map(|&y| y as f64))
        .collect();
    if years.is_empty() {
        return (0.0, true);
    }
    let n = years.len() as f64;
    let m = years.iter().sum::<f64>() / n;
    let var = years.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
    (var.sqrt(), false)
}

/// Dwelling units per km²; `(0, true)` for zero area.
pub fn population_density(dwelling_units: f64, area_m2: f64) -> (f64, bool) {
    if area_m2 > 0.0 {
        (dwelling_units / (area_m2 / 1e6), false)
    } else {
        (0.0, true)
    }
}
