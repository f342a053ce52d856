use std::collections::BTreeMap;

use geo::{BoundingRect, Distance, Euclidean, Rect};
use serde::{Deserialize, Serialize};

use super::types::{CrimeCategory, CrimeEvent, SpatialUnit};

/// Default GPS-uncertainty buffer around each crime location, in meters.
pub const DEFAULT_CRIME_BUFFER_M: f64 = 30.0;

/// Fractional crime counts per unit and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrimeCounts {
    pub violent: Vec<f64>,
    pub property: Vec<f64>,
    /// Crimes inside the window whose buffer touched no unit.
    pub unassigned: usize,
    /// Crimes inside the aggregation window.
    pub in_window: usize,
}

impl CrimeCounts {
    pub fn totals(&self) -> Vec<f64> {
        self.violent.iter().zip(&self.property).map(|(a, b)| a + b).collect()
    }

    /// Totals rounded half-to-even, the integer response fed to the
    /// likelihood.
    pub fn rounded_totals(&self) -> Vec<u64> {
        self.totals().into_iter().map(|t| t.round_ties_even().max(0.0) as u64).collect()
    }

    pub fn by_category(&self) -> BTreeMap<&'static str, &[f64]> {
        BTreeMap::from([
            (CrimeCategory::Violent.as_str(), self.violent.as_slice()),
            (CrimeCategory::Property.as_str(), self.property.as_slice()),
        ])
    }
}

/// Splits every crime in `window` evenly over the `k` units whose geometry
/// lies within `buffer_m` of the crime location; weight `1/k` each.
pub fn assign_crimes(
    crimes: &[CrimeEvent],
    units: &[SpatialUnit],
    buffer_m: f64,
    window: Option<(chrono::NaiveDate, chrono::NaiveDate)>,
) -> CrimeCounts {
    let buffer_m = buffer_m.max(0.0);
    let rects: Vec<Rect<f64>> = units
        .iter()
        .map(|u| u.geometry.bounding_rect().expect("non-empty polygon"))
        .collect();
    let mut counts = CrimeCounts {
        violent: vec![0.0; units.len()],
        property: vec![0.0; units.len()],
        unassigned: 0,
        in_window: 0,
    };
    let mut hits = Vec::new();
    for crime in crimes {
        if let Some((start, end)) = window {
            if crime.date < start || crime.date >= end {
                continue;
            }
        }
        counts.in_window += 1;
        let p = crime.location;
        hits.clear();
        for (i, r) in rects.iter().enumerate() {
            if p.x() < r.min().x - buffer_m
                || p.x() > r.max().x + buffer_m
                || p.y() < r.min().y - buffer_m
                || p.y() > r.max().y + buffer_m
            {
                continue;
            }
            if Euclidean.distance(&p, &units[i].geometry) <= buffer_m {
                hits.push(i);
            }
        }
        if hits.is_empty() {
            counts.unassigned += 1;
            continue;
        }
        let w = 1.0 / hits.len() as f64;
        let target = match crime.category {
            CrimeCategory::Violent => &mut counts.violent,
            CrimeCategory::Property => &mut counts.property,
        };
        for &i in &hits {
            target[i] += w;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use geo::{polygon, Point};

    fn grid2x2() -> Vec<SpatialUnit> {
        let mut out = Vec::new();
        for r in 0..2 {
            for c in 0..2 {
                let (x0, y0) = (c as f64 * 300.0, r as f64 * 300.0);
                out.push(SpatialUnit::new(
                    format!("u{r}{c}"),
                    polygon![(x: x0, y: y0), (x: x0 + 300.0, y: y0), (x: x0 + 300.0, y: y0 + 300.0), (x: x0, y: y0 + 300.0), (x: x0, y: y0)],
                ));
            }
        }
        out
    }

    fn crime(x: f64, y: f64) -> CrimeEvent {
        CrimeEvent {
            id: format!("{x},{y}"),
            location: Point::new(x, y),
            category: CrimeCategory::Property,
            date: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
        }
    }

    #[test]
    fn interior_crime_goes_to_one_unit() {
        let units = grid2x2();
        let c = assign_crimes(&[crime(100.0, 100.0)], &units, 30.0, None);
        assert_eq!(c.property, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_edge_splits_in_half() {
        let units = grid2x2();
        let c = assign_crimes(&[crime(300.0, 100.0)], &units, 30.0, None);
        assert_eq!(c.property, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn four_corner_point_splits_in_quarters() {
        let units = grid2x2();
        let c = assign_crimes(&[crime(300.0, 300.0)], &units, 30.0, None);
        // brute-force: count squares within the disk
        let k = units
            .iter()
            .filter(|u| Euclidean.distance(&Point::new(300.0, 300.0), &u.geometry) <= 30.0)
            .count();
        assert_eq!(k, 4);
        assert_eq!(c.property, vec![0.25; 4]);
    }

    #[test]
    fn far_crime_is_unassigned_and_window_filters() {
        let units = grid2x2();
        let mut late = crime(100.0, 100.0);
        late.date = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let window = (NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), NaiveDate::from_ymd_opt(2021, 1, 1).unwrap());
        let c = assign_crimes(&[crime(5000.0, 0.0), late, crime(10.0, 10.0)], &units, 30.0, Some(window));
        assert_eq!(c.unassigned, 1);
        assert_eq!(c.in_window, 2);
        assert_eq!(c.totals().iter().sum::<f64>(), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weight_is_conserved(pts in proptest::collection::vec((-100.0..700.0f64, -100.0..700.0f64), 0..60), buf in 0.0..80.0f64) {
                let units = grid2x2();
                let crimes: Vec<_> = pts.iter().map(|&(x, y)| crime(x, y)).collect();
                let c = assign_crimes(&crimes, &units, buf, None);
                let total: f64 = c.totals().iter().sum::<f64>() + c.unassigned as f64;
                prop_assert!((total - crimes.len() as f64).abs() < 1e-9);
            }
        }
    }
}
