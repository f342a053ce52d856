//! Writers for the ingest file formats. A dataset written here and read back
//! with [`super::ingest_city`] is identical up to float formatting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use geojson::{Feature, FeatureCollection, Geometry, GeometryValue, JsonObject, JsonValue};

use super::ingest::IngestConfig;
use super::types::CityDataset;
use crate::Result;

fn feature(geom: &geo::Polygon<f64>, props: JsonObject) -> Feature {
    Feature {
        geometry: Some(Geometry::new(GeometryValue::from(geom))),
        properties: Some(props),
        ..Default::default()
    }
}

fn write_fc(path: &Path, features: Vec<Feature>) -> Result<()> {
    let fc = FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    };
    fs::write(path, fc.to_string())?;
    Ok(())
}

fn obj(pairs: Vec<(&str, JsonValue)>) -> JsonObject {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Writes every dataset component to `dir` and returns the matching config
/// (paths relative to `dir`). The config itself is written as `ingest.toml`.
pub fn write_city(dataset: &CityDataset, dir: &Path) -> Result<IngestConfig> {
    fs::create_dir_all(dir)?;

    let units = dataset
        .units
        .iter()
        .map(|u| {
            feature(
                &u.geometry,
                obj(vec![
                    ("id", JsonValue::from(u.id.clone())),
                    ("residential_population", JsonValue::from(u.residential_population)),
                    ("dwelling_units", JsonValue::from(u.dwelling_units)),
                ]),
            )
        })
        .collect();
    write_fc(&dir.join("units.geojson"), units)?;

    let blocks = dataset
        .blocks
        .iter()
        .map(|b| {
            feature(
                &b.geometry,
                obj(vec![
                    ("id", JsonValue::from(b.id.clone())),
                    ("unit_id", JsonValue::from(b.unit_id.clone())),
                    ("building_years", JsonValue::from(b.buildings.clone())),
                ]),
            )
        })
        .collect();
    write_fc(&dir.join("blocks.geojson"), blocks)?;

    let parcels = dataset
        .parcels
        .iter()
        .enumerate()
        .map(|(i, p)| {
            feature(
                &p.geometry,
                obj(vec![
                    ("id", JsonValue::from(format!("p{i}"))),
                    ("land_use", JsonValue::from(p.land_use.as_str())),
                ]),
            )
        })
        .collect();
    write_fc(&dir.join("parcels.geojson"), parcels)?;

    let mut w = csv::Writer::from_path(dir.join("census.csv"))?;
    w.write_record([
        "unit_id",
        "unemployment_rate",
        "poverty_rate",
        "residential_mobility_rate",
        "share_1",
        "share_2",
        "share_3",
        "share_4",
        "share_5",
        "share_6",
    ])?;
    for c in &dataset.census {
        let mut rec = vec![
            c.unit_id.clone(),
            c.unemployment_rate.to_string(),
            c.poverty_rate.to_string(),
            c.residential_mobility_rate.to_string(),
        ];
        rec.extend(c.ethnic_shares.iter().map(|s| s.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("crimes.csv"))?;
    w.write_record(["id", "x", "y", "category", "date"])?;
    for c in &dataset.crimes {
        w.write_record([
            c.id.clone(),
            c.location.x().to_string(),
            c.location.y().to_string(),
            c.category.as_str().to_string(),
            c.date.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("pois.csv"))?;
    w.write_record(["x", "y", "category"])?;
    for p in &dataset.pois {
        w.write_record([p.location.x().to_string(), p.location.y().to_string(), p.category.as_str().to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("poi_mapping.csv"))?;
    w.write_record(["raw_category", "canonical"])?;
    for c in crate::geo_core::PoiCategory::ALL {
        w.write_record([c.as_str(), c.as_str()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("stays.csv"))?;
    w.write_record(["person_id", "day", "x", "y", "duration_hours"])?;
    for s in &dataset.stays {
        w.write_record([
            s.person_id.clone(),
            s.day.to_string(),
            s.location.x().to_string(),
            s.location.y().to_string(),
            s.duration_hours.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("trips.csv"))?;
    w.write_record(["person_id", "day", "origin_x", "origin_y", "dest_x", "dest_y", "type"])?;
    for t in &dataset.trips {
        w.write_record([
            t.person_id.clone(),
            t.day.to_string(),
            t.origin.x().to_string(),
            t.origin.y().to_string(),
            t.destination.x().to_string(),
            t.destination.y().to_string(),
            t.kind.as_str().to_string(),
        ])?;
    }
    w.flush()?;

    let g = &dataset.street_graph;
    let mut w = csv::Writer::from_path(dir.join("street_nodes.csv"))?;
    w.write_record(["node_id", "x", "y"])?;
    for (id, p) in g.node_ids.iter().zip(&g.nodes) {
        w.write_record([id.clone(), p.x().to_string(), p.y().to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("street_edges.csv"))?;
    w.write_record(["node_id_a", "node_id_b", "length_m"])?;
    for &(a, b, len) in &g.edges {
        w.write_record([g.node_ids[a].clone(), g.node_ids[b].clone(), len.to_string()])?;
    }
    w.flush()?;

    let cfg = IngestConfig {
        name: dataset.name.clone(),
        crs: Some("LOCAL:metric".into()),
        units: PathBuf::from("units.geojson"),
        blocks: PathBuf::from("blocks.geojson"),
        census: PathBuf::from("census.csv"),
        crimes: PathBuf::from("crimes.csv"),
        parcels: Some(PathBuf::from("parcels.geojson")),
        pois: Some(PathBuf::from("pois.csv")),
        poi_mapping: Some(PathBuf::from("poi_mapping.csv")),
        stays: Some(PathBuf::from("stays.csv")),
        trips: Some(PathBuf::from("trips.csv")),
        street_nodes: Some(PathBuf::from("street_nodes.csv")),
        street_edges: Some(PathBuf::from("street_edges.csv")),
        crime_window_start: dataset.crime_window.0,
        crime_window_end: dataset.crime_window.1,
    };
    let mut f = fs::File::create(dir.join("ingest.toml"))?;
    f.write_all(cfg.to_toml().as_bytes())?;
    Ok(cfg)
}
