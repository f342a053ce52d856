use std::collections::BTreeMap;

use corehood::features::{assemble_features, FeatureSelection, RawFeatures, WalkabilityConfig, FEATURES};
use corehood::geo_core::build_corehoods;
use corehood::synthgen::{generate_city, SynthConfig};
use proptest::prelude::*;

fn city() -> (corehood::geo_core::CityDataset, Vec<corehood::geo_core::Corehood>) {
    let cfg = SynthConfig {
        rows: 7,
        cols: 6,
        seed: 4,
        beta: BTreeMap::from([("disadvantage".to_string(), 0.3)]),
        ..SynthConfig::default()
    };
    let (ds, _) = generate_city(&cfg).unwrap();
    let ch = build_corehoods(&ds.units, cfg.truth_radius_m).unwrap();
    (ds, ch)
}

fn check_standardized(x: &nalgebra::DMatrix<f64>) {
    let n = x.nrows() as f64;
    for col in x.column_iter() {
        let m = col.sum() / n;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() < 1e-8, "mean {m}");
        assert!((sd - 1.0).abs() < 1e-6, "sd {sd}");
        assert!(col.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn core_selection_columns() {
    let (ds, ch) = city();
    let fm = assemble_features(&ds, &ch, &"Core".parse().unwrap(), &WalkabilityConfig::default()).unwrap();
    assert_eq!(
        fm.names,
        ["residential_population", "nightlife_pois", "shops_pois", "food_pois", "ambient_population"]
    );
    assert_eq!(fm.core_ids.len(), ds.units.len());
    check_standardized(&fm.x);
}

#[test]
fn full_selection_includes_core() {
    let (ds, ch) = city();
    let fm = assemble_features(&ds, &ch, &"SD+BE+M".parse().unwrap(), &WalkabilityConfig::default()).unwrap();
    let all: Vec<&str> = FEATURES.iter().map(|(n, _)| *n).collect();
    assert_eq!(fm.names, all);
    check_standardized(&fm.x);
    assert_eq!(fm.standardization.len(), fm.names.len());
}

#[test]
fn raw_feature_ranges() {
    let (ds, ch) = city();
    let walk = WalkabilityConfig::default();
    let raw = corehood::features::compute_raw_features(&ds, &ch, &walk).unwrap();
    let lum = raw.column("land_use_mix").unwrap();
    assert!(lum.iter().all(|v| (0.0..=1.0).contains(v)));
    let hhi = raw.column("ethnic_diversity").unwrap();
    assert!(hhi.iter().all(|v| (0.0..=5.0 / 6.0 + 1e-12).contains(v)));
    let w = raw.column("walkability").unwrap();
    assert!(w.iter().all(|v| *v >= 0.0 && *v <= walk.max_score() + 1e-9));
}

fn raw_fixture(columns: Vec<Vec<f64>>) -> RawFeatures {
    let n = columns[0].len();
    RawFeatures {
        core_ids: (0..n).map(|i| format!("c{i}")).collect(),
        names: (0..columns.len()).map(|j| FEATURES[j].0.to_string()).collect(),
        groups: (0..columns.len()).map(|j| FEATURES[j].1).collect(),
        columns,
        flags: vec![],
        sd_loadings: None,
    }
}

proptest! {
    #[test]
    fn standardization_ignores_affine_rescaling(
        cols in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 12), 3),
        scale in 0.01f64..100.0,
        shift in -1000.0f64..1000.0,
    ) {
        let raw = raw_fixture(cols.clone());
        prop_assume!(raw.standardize().names.len() == 3);
        let moved = raw_fixture(cols.iter().map(|c| c.iter().map(|v| v * scale + shift).collect()).collect());
        let a = raw.standardize();
        let b = moved.standardize();
        prop_assert_eq!(&a.names, &b.names);
        for (u, v) in a.x.iter().zip(b.x.iter()) {
            prop_assert!((u - v).abs() < 1e-6, "{} vs {}", u, v);
        }
    }

    #[test]
    fn selection_always_contains_core(groups in prop::sample::subsequence(vec!["SD", "BE", "M"], 0..=3)) {
        let text = if groups.is_empty() { "Core".to_string() } else { groups.join("+") };
        let sel: FeatureSelection = text.parse().unwrap();
        let cols = sel.columns();
        for core in ["residential_population", "nightlife_pois", "shops_pois", "food_pois", "ambient_population"] {
            prop_assert!(cols.iter().any(|c| c == core));
        }
    }
}
