//! Mobility-derived features from precomputed stays and trips.

use std::collections::{BTreeSet, HashSet};

use crate::geo_core::{locate_point, unit_rects, Corehood, SpatialUnit, Stay, Trip, TripType};

pub const MIN_STAY_HOURS: f64 = 1.0;

/// Mean daily number of distinct people stopping at least `min_hours` in each
/// unit. Days are those present in `stays`; no stays gives all zeros.
pub fn ambient_population(stays: &[Stay], units: &[SpatialUnit], min_hours: f64) -> Vec<f64> {
    let mut out = vec![0.0; units.len()];
    if stays.is_empty() {
        log::warn!("no stays in dataset: ambient population is zero everywhere");
        return out;
    }
    let rects = unit_rects(units);
    let days: BTreeSet<u32> = stays.iter().map(|s| s.day).collect();
    let mut seen: HashSet<(u32, usize, &str)> = HashSet::new();
    for s in stays {
        if s.duration_hours < min_hours {
            continue;
        }
        if let Some(u) = locate_point(units, &rects, s.location) {
            if seen.insert((s.day, u, s.person_id.as_str())) {
                out[u] += 1.0;
            }
        }
    }
    let n_days = days.len() as f64;
    out.iter_mut().for_each(|v| *v /= n_days);
    out
}

/// Number of NHB trips whose destination lies in any member unit of each
/// corehood.
pub fn attractiveness(trips: &[Trip], units: &[SpatialUnit], corehoods: &[Corehood]) -> Vec<f64> {
    let rects = unit_rects(units);
    let mut per_unit = vec![0.0; units.len()];
    for t in trips.iter().filter(|t| t.kind == TripType::Nhb) {
        if let Some(u) = locate_point(units, &rects, t.destination) {
            per_unit[u] += 1.0;
        }
    }
    corehoods
        .iter()
        .map(|c| c.members.iter().map(|&m| per_unit[m]).sum())
        .collect()
}
