//! Synthetic lattice cities with known generating parameters.
//!
//! Every unit is a `cell_m` square. Counts are drawn as
//! `y ~ NB2(exp(β₀ + Xβ + Eγ*), φ)` where `X` comes from the regular feature
//! pipeline at `truth_radius_m` and `E` is the contiguity eigenbasis of the
//! lattice (orthogonal to `X`).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use geo::{coord, Point, Polygon, Rect};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::connectivity::contiguity_matrix;
use crate::features::{compute_raw_features, FeatureSelection, WalkabilityConfig, FEATURES};
use crate::geo_core::{
    build_corehoods, write_city, Block, CensusRecord, CityDataset, CrimeCategory, CrimeEvent, IngestConfig, LandUse,
    Parcel, Poi, PoiCategory, SpatialUnit, Stay, StreetGraph, Trip, TripType, HALF_MILE_M,
};
use crate::model::nb2_sample;
use crate::spatial_filter::{eigenbasis_for_design, DEFAULT_EIGEN_THRESHOLD};
use crate::{Error, Result};

/// Minimum distance between a generated crime and its unit's boundary.
pub const CRIME_INSET_M: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialField {
    None,
    /// Field `Eγ*` rescaled to standard deviation `scale` on the log scale.
    Eigen { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub cell_m: f64,
    pub seed: u64,
    pub beta0: f64,
    /// True coefficients on the standardized scale, by feature name.
    pub beta: BTreeMap<String, f64>,
    pub spatial_field: SpatialField,
    pub phi: f64,
    pub truth_radius_m: f64,
    /// POIs per km² at average activity.
    pub poi_density: f64,
    pub stays_per_unit_day: f64,
    pub trips_per_unit_day: f64,
    pub days: u32,
    /// Length scale of the gravity model for trip destinations.
    pub trip_decay_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            rows: 20,
            cols: 20,
            cell_m: 500.0,
            seed: 1,
            beta0: 2.0,
            beta: BTreeMap::new(),
            spatial_field: SpatialField::None,
            phi: 5.0,
            truth_radius_m: HALF_MILE_M,
            poi_density: 40.0,
            stays_per_unit_day: 15.0,
            trips_per_unit_day: 8.0,
            days: 5,
            trip_decay_m: 1500.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 3 || self.cols < 3 {
            return Err(Error::config("grid", format!("need at least 3×3, got {}×{}", self.rows, self.cols)));
        }
        if !(self.cell_m >= 2.5 * CRIME_INSET_M) || !self.cell_m.is_finite() {
            return Err(Error::config("cell_m", format!("must be at least {} m", 2.5 * CRIME_INSET_M)));
        }
        if !(self.phi > 0.0) || !self.phi.is_finite() {
            return Err(Error::config("phi", "must be > 0"));
        }
        if !(self.truth_radius_m > 0.0) {
            return Err(Error::config("truth_radius_m", "must be > 0"));
        }
        for (field, v) in [
            ("poi_density", self.poi_density),
            ("stays_per_unit_day", self.stays_per_unit_day),
            ("trips_per_unit_day", self.trips_per_unit_day),
            ("trip_decay_m", self.trip_decay_m),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("infeasible rate {v}")));
            }
        }
        if self.trips_per_unit_day > 0.0 && self.trip_decay_m <= 0.0 {
            return Err(Error::config("trip_decay_m", "must be > 0 when trips are generated"));
        }
        if self.days == 0 {
            return Err(Error::config("days", "must be ≥ 1"));
        }
        for (name, b) in &self.beta {
            if !FEATURES.iter().any(|(f, _)| f == name) {
                return Err(Error::config("beta", format!("unknown feature `{name}`")));
            }
            if !b.is_finite() {
                return Err(Error::config("beta", format!("non-finite coefficient for `{name}`")));
            }
        }
        if !self.beta0.is_finite() {
            return Err(Error::config("beta0", "must be finite"));
        }
        if let SpatialField::Eigen { scale } = self.spatial_field {
            if !(scale >= 0.0) || !scale.is_finite() {
                return Err(Error::config("spatial_field.scale", "must be ≥ 0"));
            }
        }
        Ok(())
    }

    /// Truth features in canonical order.
    pub fn beta_names(&self) -> Vec<String> {
        FEATURES.iter().map(|(f, _)| f.to_string()).filter(|f| self.beta.contains_key(f)).collect()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("synth", e.to_string()))
    }
}

/// Every value used to generate the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: SynthConfig,
    pub unit_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub phi: f64,
    pub gamma: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// `Eγ*` per unit.
    pub field: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub y: Vec<u64>,
}

impl TruthRecord {
    /// Writes `truth.csv` (parameter, value) and `truth_units.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
        w.write_record(["parameter", "value"])?;
        w.write_record(["beta0".to_string(), self.beta0.to_string()])?;
        for (n, b) in self.feature_names.iter().zip(&self.beta) {
            w.write_record([format!("beta[{n}]"), b.to_string()])?;
        }
        w.write_record(["phi".to_string(), self.phi.to_string()])?;
        for (l, (g, lam)) in self.gamma.iter().zip(&self.eigenvalues).enumerate() {
            w.write_record([format!("gamma[{l}]"), g.to_string()])?;
            w.write_record([format!("lambda[{l}]"), lam.to_string()])?;
        }
        w.write_record(["truth_radius_m".to_string(), self.config.truth_radius_m.to_string()])?;
        w.write_record(["seed".to_string(), self.config.seed.to_string()])?;
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("truth_units.csv"))?;
        w.write_record(["unit_id", "field", "eta", "mu", "y"])?;
        for i in 0..self.unit_ids.len() {
            w.write_record([
                self.unit_ids[i].clone(),
                self.field[i].to_string(),
                self.eta[i].to_string(),
                self.mu[i].to_string(),
                self.y[i].to_string(),
            ])?;
        }
        w.flush()?;
        let mut f = std::fs::File::create(dir.join("synth.toml"))?;
        f.write_all(toml::to_string(&self.config).map_err(|e| Error::config("synth", e.to_string()))?.as_bytes())?;
        Ok(())
    }
}

fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon<f64> {
    Rect::new(coord! { x: x0, y: y0 }, coord! { x: x1, y: y1 }).to_polygon()
}

/// Sorted cut positions splitting `[a, b]` into `k` jittered pieces.
fn cuts(rng: &mut ChaCha8Rng, a: f64, b: f64, k: usize) -> Vec<f64> {
    let w = (b - a) / k as f64;
    let mut out = vec![a];
    for j in 1..k {
        out.push(a + w * (j as f64 + rng.random_range(-0.25..0.25)));
    }
    out.push(b);
    out
}

fn crime_window() -> (NaiveDate, NaiveDate) {
    (NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(), NaiveDate::from_ymd_opt(2024, 1, 1).unwrap())
}

/// Generates the city and its truth.
pub fn generate_city(cfg: &SynthConfig) -> Result<(CityDataset, TruthRecord)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rows, cols, cell) = (cfg.rows, cfg.cols, cfg.cell_m);
    let n = rows * cols;
    let activity_dist = LogNormal::new(0.0, 0.5).expect("valid lognormal");

    let mut units = Vec::with_capacity(n);
    let mut blocks = Vec::new();
    let mut parcels = Vec::new();
    let mut census = Vec::with_capacity(n);
    let mut activity = Vec::with_capacity(n);
    let share_gamma = Gamma::new(0.8, 1.0).expect("valid gamma");
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c as f64 * cell, r as f64 * cell);
            let id = format!("U{r:03}{c:03}");
            let mut unit = SpatialUnit::new(id.clone(), square(x0, y0, x0 + cell, y0 + cell));
            unit.residential_population = rng.random_range(300.0..2500.0f64).round();
            unit.dwelling_units = (unit.residential_population / rng.random_range(1.8..3.2)).round();
            activity.push(activity_dist.sample(&mut rng));

            let kx = rng.random_range(1..=3);
            let ky = rng.random_range(1..=3);
            let xs = cuts(&mut rng, x0, x0 + cell, kx);
            let ys = cuts(&mut rng, y0, y0 + cell, ky);
            let base_year = rng.random_range(1900..2000) as f64;
            let spread = rng.random_range(2.0..40.0);
            let p_res = rng.random_range(0.2..0.9);
            let age = Normal::new(base_year, spread).expect("valid normal");
            for i in 0..kx {
                for j in 0..ky {
                    let bid = format!("{id}B{i}{j}");
                    let geom = square(xs[i], ys[j], xs[i + 1], ys[j + 1]);
                    let mut block = Block::new(bid.clone(), id.clone(), geom.clone());
                    let nb = rng.random_range(2..=12);
                    block.buildings = (0..nb).map(|_| (age.sample(&mut rng).round() as i32).min(2023)).collect();
                    unit.blocks.push(bid);
                    blocks.push(block);
                    let u: f64 = rng.random();
                    let land_use = if u < p_res {
                        LandUse::Residential
                    } else if u < p_res + (1.0 - p_res) * 0.5 {
                        LandUse::CommercialInstitutional
                    } else if u < p_res + (1.0 - p_res) * 0.85 {
                        LandUse::ParkRecreational
                    } else {
                        LandUse::Other
                    };
                    parcels.push(Parcel { geometry: geom, land_use });
                }
            }

            let unemployment: f64 = 0.02 + 0.18 * rng.random::<f64>();
            let poverty = (0.8 * unemployment + 0.3 * rng.random::<f64>()).min(1.0);
            let mobility = rng.random_range(0.05..0.45);
            let mut shares = [0.0; 6];
            for s in shares.iter_mut() {
                *s = share_gamma.sample(&mut rng) + 1e-9;
            }
            let total: f64 = shares.iter().sum();
            shares.iter_mut().for_each(|s| *s /= total);
            census.push(CensusRecord {
                unit_id: id,
                unemployment_rate: unemployment,
                poverty_rate: poverty,
                residential_mobility_rate: mobility,
                ethnic_shares: shares,
            });
            units.push(unit);
        }
    }

    // street lattice at half-cell spacing
    let (gr, gc) = (2 * rows + 1, 2 * cols + 1);
    let step = cell / 2.0;
    let mut street = StreetGraph::default();
    for r in 0..gr {
        for c in 0..gc {
            street.node_ids.push(format!("N{r}_{c}"));
            street.nodes.push(Point::new(c as f64 * step, r as f64 * step));
        }
    }
    for r in 0..gr {
        for c in 0..gc {
            let i = r * gc + c;
            if c + 1 < gc {
                street.edges.push((i, i + 1, step));
            }
            if r + 1 < gr {
                street.edges.push((i, i + gc, step));
            }
        }
    }

    let point_in = |rng: &mut ChaCha8Rng, i: usize, inset: f64| {
        let (r, c) = (i / cols, i % cols);
        Point::new(
            c as f64 * cell + rng.random_range(inset..cell - inset),
            r as f64 * cell + rng.random_range(inset..cell - inset),
        )
    };

    let area_km2 = cell * cell / 1e6;
    let mut pois = Vec::new();
    for i in 0..n {
        let lambda = cfg.poi_density * area_km2 * activity[i];
        let k = poisson(&mut rng, lambda);
        for _ in 0..k {
            let category = PoiCategory::ALL[rng.random_range(0..PoiCategory::ALL.len())];
            pois.push(Poi { location: point_in(&mut rng, i, 1.0), category });
        }
    }

    let duration = Exp::<f64>::new(1.0 / 1.5).expect("valid exponential");
    let mut stays = Vec::new();
    let mut person = 0usize;
    for day in 0..cfg.days {
        for i in 0..n {
            let k = poisson(&mut rng, cfg.stays_per_unit_day * activity[i]);
            for _ in 0..k {
                stays.push(Stay {
                    person_id: format!("P{person}"),
                    day,
                    location: point_in(&mut rng, i, 1.0),
                    duration_hours: (duration.sample(&mut rng) * 100.0).round() / 100.0,
                });
                person += 1;
            }
        }
    }

    let mut trips = Vec::new();
    if cfg.trips_per_unit_day > 0.0 {
        let centers: Vec<Point<f64>> = units.iter().map(|u| u.centroid).collect();
        let cumulative: Vec<Vec<f64>> = (0..n)
            .map(|o| {
                let mut acc = 0.0;
                (0..n)
                    .map(|d| {
                        let dist = ((centers[o].x() - centers[d].x()).powi(2) + (centers[o].y() - centers[d].y()).powi(2)).sqrt();
                        acc += activity[d] * (-dist / cfg.trip_decay_m).exp();
                        acc
                    })
                    .collect()
            })
            .collect();
        for day in 0..cfg.days {
            for o in 0..n {
                let k = poisson(&mut rng, cfg.trips_per_unit_day);
                for _ in 0..k {
                    let cum = &cumulative[o];
                    let u = rng.random::<f64>() * cum[n - 1];
                    let d = cum.partition_point(|&v| v <= u).min(n - 1);
                    let t: f64 = rng.random();
                    let kind = if t < 0.3 {
                        TripType::Hbw
                    } else if t < 0.6 {
                        TripType::Hbo
                    } else {
                        TripType::Nhb
                    };
                    trips.push(Trip {
                        person_id: format!("P{person}"),
                        day,
                        origin: point_in(&mut rng, o, 1.0),
                        destination: point_in(&mut rng, d, 1.0),
                        kind,
                    });
                    person += 1;
                }
            }
        }
    }

    let mut dataset = CityDataset {
        name: cfg.name.clone(),
        units,
        blocks,
        pois,
        street_graph: street,
        crimes: Vec::new(),
        stays,
        trips,
        parcels,
        census,
        crime_window: crime_window(),
    };
    dataset.validate()?;

    // truth linear predictor from the regular feature pipeline
    let corehoods = build_corehoods(&dataset.units, cfg.truth_radius_m)?;
    let raw = compute_raw_features(&dataset, &corehoods, &WalkabilityConfig::default())?;
    let names = cfg.beta_names();
    let fm = raw.select(&FeatureSelection::Columns(names.clone()))?.standardize();
    if fm.names != names {
        let lost: Vec<&String> = names.iter().filter(|f| !fm.names.contains(f)).collect();
        return Err(Error::config("beta", format!("features constant in the generated city: {lost:?}")));
    }
    let beta = DVector::from_iterator(names.len(), names.iter().map(|f| cfg.beta[f]));
    let mut eta = &fm.x * &beta;
    eta.add_scalar_mut(cfg.beta0);

    let (gamma, eigenvalues, field) = match cfg.spatial_field {
        SpatialField::None => (vec![], vec![], vec![0.0; n]),
        SpatialField::Eigen { scale } => {
            let c = contiguity_matrix(&corehoods);
            let basis = eigenbasis_for_design(&fm.x, Some(&fm.names), &c, DEFAULT_EIGEN_THRESHOLD)?;
            let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
            let raw_g: Vec<f64> = basis
                .lambdas
                .iter()
                .map(|l| std_normal.sample(&mut rng) * (l / basis.lambda_max).sqrt())
                .collect();
            let f = &basis.e * DVector::from_column_slice(&raw_g);
            let sd = crate::linalg::sample_variance(f.as_slice()).sqrt();
            let k = if sd > 0.0 { scale / sd } else { 0.0 };
            let g: Vec<f64> = raw_g.iter().map(|v| v * k).collect();
            let f: Vec<f64> = f.iter().map(|v| v * k).collect();
            (g, basis.lambdas.clone(), f)
        }
    };
    for (e, f) in eta.iter_mut().zip(&field) {
        *e += f;
    }
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let y: Vec<u64> = mu.iter().map(|&m| nb2_sample(&mut rng, m, cfg.phi)).collect();

    let (start, end) = dataset.crime_window;
    let span = (end - start).num_days() as u64;
    let mut k = 0usize;
    for (i, &count) in y.iter().enumerate() {
        for _ in 0..count {
            let category = if rng.random::<f64>() < 0.3 { CrimeCategory::Violent } else { CrimeCategory::Property };
            let date = start + Days::new(rng.random_range(0..span));
            dataset.crimes.push(CrimeEvent {
                id: format!("C{k}"),
                location: point_in(&mut rng, i, CRIME_INSET_M),
                category,
                date,
            });
            k += 1;
        }
    }

    let truth = TruthRecord {
        config: cfg.clone(),
        unit_ids: dataset.units.iter().map(|u| u.id.clone()).collect(),
        feature_names: names,
        beta0: cfg.beta0,
        beta: beta.iter().copied().collect(),
        phi: cfg.phi,
        gamma,
        eigenvalues,
        field,
        eta: eta.iter().copied().collect(),
        mu,
        y,
    };
    Ok((dataset, truth))
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

/// Writes the city in ingest format plus the truth files.
pub fn write_synth(dataset: &CityDataset, truth: &TruthRecord, dir: &Path) -> Result<IngestConfig> {
    let cfg = write_city(dataset, dir)?;
    truth.write(dir)?;
    Ok(cfg)
}
