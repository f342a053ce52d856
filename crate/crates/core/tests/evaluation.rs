use std::collections::BTreeMap;

use corehood::connectivity::ConnectivityKind;
use corehood::evaluation::{
    compare_fits, compare_models, decompose, evaluate, in_sample_fixed_score, radius_sweep, transfer_evaluate,
};
use corehood::features::{FeatureSelection, WalkabilityConfig};
use corehood::linalg::pearson;
use corehood::model::{ModelSpec, Profile, SamplerSettings, Variant};
use corehood::pipeline::PreparedCity;
use corehood::synthgen::{generate_city, SpatialField, SynthConfig, TruthRecord};
use corehood::Error;

fn sampler(seed: u64) -> SamplerSettings {
    let mut s = SamplerSettings::profile(Profile::Desk, seed);
    s.warmup = 500;
    s.iterations = 250;
    s
}

fn synth(seed: u64, beta: &[(&str, f64)], field: f64) -> (PreparedCity, TruthRecord) {
    let cfg = SynthConfig {
        rows: 10,
        cols: 10,
        seed,
        beta: beta.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        spatial_field: if field > 0.0 { SpatialField::Eigen { scale: field } } else { SpatialField::None },
        ..SynthConfig::default()
    };
    let (ds, truth) = generate_city(&cfg).unwrap();
    (PreparedCity::new(ds, cfg.truth_radius_m, &WalkabilityConfig::default()).unwrap(), truth)
}

fn spec(v: Variant, truth: &TruthRecord, seed: u64) -> ModelSpec {
    ModelSpec::new(v, FeatureSelection::Columns(truth.feature_names.clone()), sampler(seed))
}

const BETA: [(&str, f64); 2] = [("disadvantage", 0.5), ("land_use_mix", -0.3)];

#[test]
fn r2_nesting_and_loo_below_in_sample() {
    let (city, truth) = synth(1, &BETA, 0.6);
    let w = city.connectivity(ConnectivityKind::Contiguity).unwrap().matrix;
    for v in [Variant::NbRidge, Variant::Bsf, Variant::Esf, Variant::ReEsf] {
        let (fit, _) = city.fit(&spec(v, &truth, 1), false).unwrap();
        let rep = evaluate(&fit, &w, 0).unwrap();
        let r2 = rep.r2;
        assert!(0.0 <= r2.marginal && r2.marginal <= r2.conditional && r2.conditional <= 1.0, "{v}: {r2:?}");
        if v == Variant::NbRidge {
            assert!((r2.marginal - r2.conditional).abs() < 1e-10);
        }
        assert!(rep.loo.elpd <= rep.loo.lppd + 0.5, "{v}");
    }
}

#[test]
fn decomposition_parts() {
    let (city, truth) = synth(2, &BETA, 0.8);
    let (nb, _) = city.fit(&spec(Variant::NbRidge, &truth, 2), false).unwrap();
    let d = decompose(&nb).unwrap();
    assert!(d.random.iter().all(|&r| r == 1.0));
    for i in 0..d.mu.len() {
        assert!((d.fixed[i] - d.mu[i]).abs() <= 1e-9 * d.mu[i]);
        assert!((d.residual[i] - (nb.y[i] as f64 - d.mu[i])).abs() < 1e-12);
    }

    let (bsf, _) = city.fit(&spec(Variant::Bsf, &truth, 2), false).unwrap();
    let d = decompose(&bsf).unwrap();
    for i in 0..d.mu.len() {
        let rel = (d.fixed[i] * d.random[i] - d.mu[i]).abs() / d.mu[i];
        assert!(rel < 0.1, "unit {i}: {} vs {}", d.fixed[i] * d.random[i], d.mu[i]);
    }
    let log_random: Vec<f64> = d.random.iter().map(|r| r.ln()).collect();
    let r = pearson(&log_random, &truth.field);
    assert!(r > 0.5, "correlation with the planted field {r}");
}

#[test]
fn transfer_to_self_matches_in_sample_score() {
    let (city, truth) = synth(3, &BETA, 0.0);
    let (fit, _) = city.fit(&spec(Variant::NbRidge, &truth, 3), false).unwrap();
    let a = transfer_evaluate(&fit, &city.raw, &city.y).unwrap();
    let b = in_sample_fixed_score(&fit).unwrap();
    assert!((a.r2_score - b.r2_score).abs() < 1e-10);
    assert!((a.log_score - b.log_score).abs() < 1e-8);
}

#[test]
fn transfer_tracks_shared_coefficients() {
    let (src, truth) = synth(4, &BETA, 0.0);
    let (fit, _) = src.fit(&spec(Variant::NbRidge, &truth, 4), false).unwrap();
    let (same, _) = synth(5, &BETA, 0.0);
    let flipped: Vec<(&str, f64)> = BETA.iter().map(|(k, v)| (*k, -v)).collect();
    let (opposite, _) = synth(5, &flipped, 0.0);
    let good = transfer_evaluate(&fit, &same.raw, &same.y).unwrap();
    let bad = transfer_evaluate(&fit, &opposite.raw, &opposite.y).unwrap();
    assert!(good.r2_score > 0.2, "shared β: {}", good.r2_score);
    assert!(bad.r2_score < 0.05, "opposite β: {}", bad.r2_score);
    assert!(good.log_score > bad.log_score);
}

#[test]
fn transfer_lists_missing_features() {
    let (city, truth) = synth(3, &BETA, 0.0);
    let (fit, _) = city.fit(&spec(Variant::NbRidge, &truth, 3), false).unwrap();
    let dest = city.raw.select(&FeatureSelection::Columns(vec!["disadvantage".into()])).unwrap();
    match transfer_evaluate(&fit, &dest, &city.y) {
        Err(Error::FeatureMismatch(m)) => assert!(m.contains("land_use_mix"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn compare_rejects_mixed_data() {
    let (a, truth) = synth(6, &BETA, 0.0);
    let (b, _) = synth(7, &BETA, 0.0);
    let s = spec(Variant::NbRidge, &truth, 6);
    let (_, mut fits) = compare_models(&a, std::slice::from_ref(&s), 0, false).unwrap();
    let (_, other) = compare_models(&b, std::slice::from_ref(&s), 0, false).unwrap();
    fits.extend(other);
    assert!(matches!(compare_fits(&fits), Err(Error::Fingerprint(_))));
}

#[test]
fn sweep_single_radius_is_deterministic() {
    let (city, truth) = synth(8, &BETA, 0.0);
    let s = spec(Variant::NbRidge, &truth, 8);
    let walk = WalkabilityConfig::default();
    let a = radius_sweep(&city, &[804.67], &s, &walk, 0, false).unwrap();
    let b = radius_sweep(&city, &[804.67], &s, &walk, 0, false).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a, b);
    assert!(a[0].loo_elpd.is_some());
}
