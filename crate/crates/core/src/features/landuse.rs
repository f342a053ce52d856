use geo::{Area, Centroid};

use crate::geo_core::{locate_point, unit_rects, LandUse, Parcel, SpatialUnit};

/// Developed area (m²) per unit for the three mixed uses, in the order
/// residential, commercial/institutional, park/recreational. Parcels are
/// assigned to the unit containing their centroid; `other` is ignored.
pub fn unit_landuse_areas(parcels: &[Parcel], units: &[SpatialUnit]) -> Vec<[f64; 3]> {
    let rects = unit_rects(units);
    let mut out = vec![[0.0; 3]; units.len()];
    for p in parcels {
        let slot = match p.land_use {
            LandUse::Residential => 0,
            LandUse::CommercialInstitutional => 1,
            LandUse::ParkRecreational => 2,
            LandUse::Other => continue,
        };
        let Some(c) = p.geometry.centroid() else { continue };
        if let Some(u) = locate_point(units, &rects, c) {
            out[u][slot] += p.geometry.unsigned_area();
        }
    }
    out
}

/// Normalized land-use entropy `-Σ P_j ln P_j / ln |L|` over the given areas.
/// Returns `(value, no_landuse)`; zero developed area gives `(0, true)`.
pub fn land_use_mix(areas: &[f64]) -> (f64, bool) {
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) || areas.len() < 2 {
        return (0.0, true);
    }
    let h: f64 = areas
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| {
            let p = a / total;
            -p * p.ln()
        })
        .sum();
    ((h / (areas.len() as f64).ln()).clamp(0.0, 1.0), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use geo::polygon;
    use proptest::prelude::*;

    #[test]
    fn single_use_and_even_split() {
        assert_eq!(land_use_mix(&[5.0, 0.0, 0.0]), (0.0, false));
        let (v, _) = land_use_mix(&[1.0, 1.0, 1.0]);
        assert!((v - 1.0).abs() < 1e-12);
        let (v, _) = land_use_mix(&[0.5, 0.5, 0.0]);
        assert!((v - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(land_use_mix(&[0.0, 0.0, 0.0]), (0.0, true));
    }

    #[test]
    fn parcels_assigned_by_centroid() {
        let units = vec![
            SpatialUnit::new("a", polygon![(x: 0.0, y: 0.0), (x: 100.0, y: 0.0), (x: 100.0, y: 100.0), (x: 0.0, y: 100.0), (x: 0.0, y: 0.0)]),
            SpatialUnit::new("b", polygon![(x: 100.0, y: 0.0), (x: 200.0, y: 0.0), (x: 200.0, y: 100.0), (x: 100.0, y: 100.0), (x: 100.0, y: 0.0)]),
        ];
        let parcels = vec![
            Parcel { geometry: polygon![(x: 10.0, y: 10.0), (x: 20.0, y: 10.0), (x: 20.0, y: 20.0), (x: 10.0, y: 20.0), (x: 10.0, y: 10.0)], land_use: LandUse::Residential },
            Parcel { geometry: polygon![(x: 110.0, y: 10.0), (x: 130.0, y: 10.0), (x: 130.0, y: 20.0), (x: 110.0, y: 20.0), (x: 110.0, y: 10.0)], land_use: LandUse::ParkRecreational },
            Parcel { geometry: polygon![(x: 30.0, y: 10.0), (x: 40.0, y: 10.0), (x: 40.0, y: 20.0), (x: 30.0, y: 20.0), (x: 30.0, y: 10.0)], land_use: LandUse::Other },
        ];
        let areas = unit_landuse_areas(&parcels, &units);
        assert_eq!(areas, vec![[100.0, 0.0, 0.0], [0.0, 0.0, 200.0]]);
    }

    proptest! {
        #[test]
        fn bounded(a in 0.0f64..1e6, b in 0.0f64..1e6, c in 0.0f64..1e6) {
            let (v, _) = land_use_mix(&[a, b, c]);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
