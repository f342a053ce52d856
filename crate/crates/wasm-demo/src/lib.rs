//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Results cross the boundary as JSON strings or `Float64Array`s.

use std::collections::BTreeMap;

use corehood::connectivity::ConnectivityKind;
use corehood::features::{DecayCurve, WalkabilityConfig};
use corehood::model::nb2_logpmf;
use corehood::pipeline::PreparedCity;
use corehood::spatial_filter::eigenbasis_for_design;
use corehood::synthgen::{generate_city, SpatialField, SynthConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct Cell {
    id: String,
    /// Bounding box `[x0, y0, x1, y1]` in meters.
    bbox: [f64; 4],
}

#[derive(Serialize)]
struct Layers<'a> {
    cells: &'a [Cell],
    /// Layer name to one value per cell.
    layers: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize)]
struct Eigen {
    lambda_max: f64,
    /// Kept eigenvalues, descending.
    lambdas: Vec<f64>,
    /// Moran's I of each kept eigenvector under the chosen connectivity.
    moran: Vec<f64>,
    /// One array of unit values per kept eigenvector.
    vectors: Vec<Vec<f64>>,
}

/// A synthetic city with its corehoods and features.
#[wasm_bindgen]
pub struct DemoCity {
    city: PreparedCity,
    cells: Vec<Cell>,
    truth: BTreeMap<String, Vec<f64>>,
}

#[wasm_bindgen]
impl DemoCity {
    /// Generates a `rows × cols` city. `field_scale` is the standard
    /// deviation of the planted spatial field (0 for none); `beta_json` maps
    /// feature names to true coefficients, e.g. `{"disadvantage": 0.4}`.
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, seed: u64, field_scale: f64, beta_json: &str) -> Result<DemoCity, JsError> {
        let beta: BTreeMap<String, f64> = serde_json::from_str(beta_json).map_err(js_err)?;
        let cfg = SynthConfig {
            rows,
            cols,
            seed,
            beta,
            spatial_field: if field_scale > 0.0 { SpatialField::Eigen { scale: field_scale } } else { SpatialField::None },
            ..SynthConfig::default()
        };
        let (dataset, truth) = generate_city(&cfg).map_err(js_err)?;
        let cells = dataset
            .units
            .iter()
            .map(|u| {
                let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
                for c in u.geometry.exterior().coords() {
                    b = [b[0].min(c.x), b[1].min(c.y), b[2].max(c.x), b[3].max(c.y)];
                }
                Cell { id: u.id.clone(), bbox: b }
            })
            .collect();
        let mut layers = BTreeMap::new();
        layers.insert("true mean".to_string(), truth.mu.clone());
        layers.insert("true spatial field".to_string(), truth.field.clone());
        let city = PreparedCity::new(dataset, cfg.truth_radius_m, &WalkabilityConfig::default()).map_err(js_err)?;
        Ok(DemoCity { city, cells, truth: layers })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Crime counts, truth layers and every raw feature, as JSON.
    pub fn maps(&self) -> Result<String, JsError> {
        let mut layers = self.truth.clone();
        layers.insert("crimes".into(), self.city.y.iter().map(|&v| v as f64).collect());
        layers.insert(
            "corehood size".into(),
            self.city.corehoods.iter().map(|c| c.len() as f64).collect(),
        );
        for name in &self.city.raw.names {
            if let Some(col) = self.city.raw.column(name) {
                layers.insert(name.clone(), col.to_vec());
            }
        }
        serde_json::to_string(&Layers { cells: &self.cells, layers }).map_err(js_err)
    }

    /// Moran eigenvectors of `MCM` with `M` the intercept-only projector.
    /// `kind` is `contiguity`, `distance` or `mobility`.
    pub fn eigenvectors(&self, kind: &str, threshold: f64) -> Result<String, JsError> {
        let kind: ConnectivityKind = kind.parse().map_err(js_err)?;
        let c = self.city.connectivity(kind).map_err(js_err)?;
        let n = c.n();
        let x = nalgebra::DMatrix::<f64>::zeros(n, 0);
        let basis = eigenbasis_for_design(&x, None, &c, threshold).map_err(js_err)?;
        let scale = n as f64 / c.total_weight();
        let out = Eigen {
            lambda_max: basis.lambda_max,
            moran: basis.lambdas.iter().map(|l| l * scale).collect(),
            lambdas: basis.lambdas.clone(),
            vectors: basis.e.column_iter().map(|v| v.iter().copied().collect()).collect(),
        };
        serde_json::to_string(&out).map_err(js_err)
    }
}

/// NB2 probabilities `P(Y = y)` for `y = 0..=y_max`.
#[wasm_bindgen]
pub fn nb_pmf(mu: f64, phi: f64, y_max: u32) -> Result<Vec<f64>, JsError> {
    (0..=y_max as u64).map(|y| nb2_logpmf(y, mu, phi).map(f64::exp).map_err(js_err)).collect()
}

/// Walkability distance decay sampled at `steps + 1` distances in `[0, d_max]`.
#[wasm_bindgen]
pub fn decay_curve(d_full: f64, d_knee: f64, d_zero: f64, knee_value: f64, d_max: f64, steps: u32) -> Result<Vec<f64>, JsError> {
    let curve = DecayCurve { d_full, d_knee, d_zero, knee_value };
    let cfg = WalkabilityConfig { decay: curve, ..WalkabilityConfig::default() };
    cfg.validate().map_err(js_err)?;
    let steps = steps.max(1);
    Ok((0..=steps).map(|i| curve.eval(d_max * i as f64 / steps as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_and_decay() {
        let p = nb_pmf(3.0, 2.0, 400).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let d = decay_curve(500.0, 1500.0, 2400.0, 0.1, 3000.0, 6).unwrap();
        assert_eq!(d[0], 1.0);
        assert!((d[3] - 0.1).abs() < 1e-12);
        assert_eq!(d[6], 0.0);
    }
}
