//! Loading a city from GeoJSON and CSV files named by an [`IngestConfig`].
//!
//! File schemas (all coordinates in a projected metric CRS):
//!
//! | input | format | fields |
//! |-------|--------|--------|
//! | `units` | GeoJSON polygons | `id`, `residential_population`, `dwelling_units` |
//! | `blocks` | GeoJSON polygons | `id`, `unit_id`, `building_years` (array of years) |
//! | `parcels` | GeoJSON polygons | `land_use` |
//! | `census` | CSV | `unit_id,unemployment_rate,poverty_rate,residential_mobility_rate,share_1..share_6` |
//! | `crimes` | CSV | `id,x,y,category,date` (ISO-8601 date) |
//! | `pois` | CSV | `x,y,category` (raw category, mapped through `poi_mapping`) |
//! | `poi_mapping` | CSV | `raw_category,canonical` |
//! | `stays` | CSV | `person_id,day,x,y,duration_hours` |
//! | `trips` | CSV | `person_id,day,origin_x,origin_y,dest_x,dest_y,type` |
//! | `street_nodes` | CSV | `node_id,x,y` |
//! | `street_edges` | CSV | `node_id_a,node_id_b,length_m` |

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use geo::{BoundingRect, Centroid, Point, Polygon};
use geojson::{FeatureCollection, JsonObject, JsonValue};
use serde::{Deserialize, Serialize};

use super::types::*;
use crate::{Error, Result};

/// Paths (relative to the config file) and the crime aggregation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Declared CRS, e.g. `EPSG:32618`. Geographic CRSs are rejected.
    #[serde(default)]
    pub crs: Option<String>,
    pub units: PathBuf,
    pub blocks: PathBuf,
    pub census: PathBuf,
    pub crimes: PathBuf,
    #[serde(default)]
    pub parcels: Option<PathBuf>,
    #[serde(default)]
    pub pois: Option<PathBuf>,
    #[serde(default)]
    pub poi_mapping: Option<PathBuf>,
    #[serde(default)]
    pub stays: Option<PathBuf>,
    #[serde(default)]
    pub trips: Option<PathBuf>,
    #[serde(default)]
    pub street_nodes: Option<PathBuf>,
    #[serde(default)]
    pub street_edges: Option<PathBuf>,
    pub crime_window_start: NaiveDate,
    pub crime_window_end: NaiveDate,
}

fn default_name() -> String {
    "city".into()
}

impl IngestConfig {
    pub fn from_toml_file(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        let cfg: IngestConfig =
            toml::from_str(&text).map_err(|e| Error::config(toml_field(&e), e.message().to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub(crate) fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    // "missing field `x`" / "unknown field `x`"
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationAction {
    Dropped,
    Repaired,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub file: String,
    pub record: String,
    pub action: ValidationAction,
    pub message: String,
}

/// Records dropped or repaired during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    fn push(&mut self, file: &str, record: impl Into<String>, action: ValidationAction, message: impl Into<String>) {
        let entry = ValidationEntry {
            file: file.to_string(),
            record: record.into(),
            action,
            message: message.into(),
        };
        if action != ValidationAction::Dropped {
            log::warn!("{}: {}: {}", entry.file, entry.record, entry.message);
        }
        self.entries.push(entry);
    }

    pub fn count(&self, action: ValidationAction) -> usize {
        self.entries.iter().filter(|e| e.action == action).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "validation report: {} dropped, {} repaired, {} warnings",
            self.count(ValidationAction::Dropped),
            self.count(ValidationAction::Repaired),
            self.count(ValidationAction::Warning)
        )?;
        for e in &self.entries {
            writeln!(f, "{:?}\t{}\t{}\t{}", e.action, e.file, e.record, e.message)?;
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn file_label(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn is_geographic_crs(name: &str) -> bool {
    let n = name.to_ascii_uppercase();
    n.contains("4326") || n.contains("CRS84") || n.contains("4269") || n.contains("4258")
}

fn read_feature_collection(path: &Path) -> Result<FeatureCollection> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let fc: FeatureCollection = text
        .parse()
        .map_err(|e: geojson::Error| Error::schema(file_label(path), "<document>", "type", e.to_string()))?;
    if let Some(crs) = fc.foreign_members.as_ref().and_then(|m| m.get("crs")) {
        if is_geographic_crs(&crs.to_string()) {
            return Err(Error::NotProjected(file_label(path)));
        }
    }
    Ok(fc)
}

fn feature_label(i: usize, props: Option<&JsonObject>) -> String {
    match props.and_then(|p| p.get("id")) {
        Some(JsonValue::String(s)) => s.clone(),
        Some(v) if !v.is_null() => v.to_string(),
        _ => format!("#{i}"),
    }
}

fn polygon_of(file: &str, record: &str, f: &geojson::Feature) -> Result<Polygon<f64>> {
    let geom = f
        .geometry
        .as_ref()
        .ok_or_else(|| Error::schema(file, record, "geometry", "missing"))?;
    if let Ok(p) = Polygon::<f64>::try_from(&geom.value) {
        return Ok(p);
    }
    match geo::MultiPolygon::<f64>::try_from(&geom.value) {
        Ok(mp) if mp.0.len() == 1 => Ok(mp.0.into_iter().next().expect("one polygon")),
        _ => Err(Error::schema(file, record, "geometry", "expected a single Polygon")),
    }
}

fn prop_f64(file: &str, record: &str, props: Option<&JsonObject>, key: &str) -> Result<f64> {
    props
        .and_then(|p| p.get(key))
        .and_then(JsonValue::as_f64)
        .ok_or_else(|| Error::schema(file, record, key, "missing or not a number"))
}

fn prop_string(file: &str, record: &str, props: Option<&JsonObject>, key: &str) -> Result<String> {
    match props.and_then(|p| p.get(key)) {
        Some(JsonValue::String(s)) => Ok(s.clone()),
        Some(JsonValue::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::schema(file, record, key, "missing or not a string")),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file))
}

/// Deserializes every row, mapping failures to schema errors naming the line
/// and field.
fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let label = file_label(path);
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| {
            let field = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => match err.kind() {
                    csv::DeserializeErrorKind::Message(m) if m.contains('`') => {
                        m.split('`').nth(1).unwrap_or("?").to_string()
                    }
                    _ => err
                        .field()
                        .and_then(|i| headers.get(i as usize))
                        .unwrap_or("?")
                        .to_string(),
                },
                _ => "?".to_string(),
            };
            Error::schema(&label, format!("line {line}"), field, e.to_string())
        })?;
        out.push((line, row));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CensusRow {
    unit_id: String,
    unemployment_rate: f64,
    poverty_rate: f64,
    residential_mobility_rate: f64,
    share_1: f64,
    share_2: f64,
    share_3: f64,
    share_4: f64,
    share_5: f64,
    share_6: f64,
}

#[derive(Deserialize)]
struct CrimeRow {
    id: String,
    x: Option<f64>,
    y: Option<f64>,
    category: String,
    date: NaiveDate,
}

#[derive(Deserialize)]
struct PoiRow {
    x: f64,
    y: f64,
    category: String,
}

#[derive(Deserialize)]
struct MappingRow {
    raw_category: String,
    canonical: String,
}

#[derive(Deserialize)]
struct StayRow {
    person_id: String,
    day: u32,
    x: f64,
    y: f64,
    duration_hours: f64,
}

#[derive(Deserialize)]
struct TripRow {
    person_id: String,
    day: u32,
    origin_x: f64,
    origin_y: f64,
    dest_x: f64,
    dest_y: f64,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Deserialize)]
struct NodeRow {
    node_id: String,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct EdgeRow {
    node_id_a: String,
    node_id_b: String,
    length_m: f64,
}

/// Reads, validates and cross-references every input of a city.
pub fn ingest_city(cfg: &IngestConfig, base: &Path) -> Result<(CityDataset, ValidationReport)> {
    let mut report = ValidationReport::default();
    if let Some(crs) = &cfg.crs {
        if is_geographic_crs(crs) {
            return Err(Error::NotProjected(format!("crs = {crs}")));
        }
    }
    if cfg.crime_window_start >= cfg.crime_window_end {
        return Err(Error::config("crime_window_end", "must be after crime_window_start"));
    }

    // units
    let units_path = resolve(base, &cfg.units);
    let units_file = file_label(&units_path);
    let fc = read_feature_collection(&units_path)?;
    let mut units = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        let props = f.properties.as_ref();
        let record = feature_label(i, props);
        let id = prop_string(&units_file, &record, props, "id")?;
        let geometry = polygon_of(&units_file, &record, f)?;
        let mut unit = SpatialUnit::new(id, geometry);
        unit.residential_population = prop_f64(&units_file, &record, props, "residential_population")?;
        unit.dwelling_units = prop_f64(&units_file, &record, props, "dwelling_units")?;
        unit.validate()?;
        units.push(unit);
    }
    if units.is_empty() {
        return Err(Error::NoUnits);
    }
    check_projected(&units_file, &units)?;
    let index: HashMap<String, usize> = units.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
    if index.len() != units.len() {
        return Err(Error::schema(&units_file, "<document>", "id", "duplicate unit ids"));
    }

    // blocks
    let blocks_path = resolve(base, &cfg.blocks);
    let blocks_file = file_label(&blocks_path);
    let fc = read_feature_collection(&blocks_path)?;
    let mut blocks = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        let props = f.properties.as_ref();
        let record = feature_label(i, props);
        let id = prop_string(&blocks_file, &record, props, "id")?;
        let unit_id = prop_string(&blocks_file, &record, props, "unit_id")?;
        let Some(&ui) = index.get(&unit_id) else {
            report.push(&blocks_file, &record, ValidationAction::Dropped, format!("unknown unit_id {unit_id}"));
            continue;
        };
        let geometry = polygon_of(&blocks_file, &record, f)?;
        let mut block = Block::new(id, unit_id, geometry);
        if let Some(years) = props.and_then(|p| p.get("building_years")) {
            let arr = years
                .as_array()
                .ok_or_else(|| Error::schema(&blocks_file, &record, "building_years", "expected an array"))?;
            for y in arr {
                let year = y
                    .as_i64()
                    .ok_or_else(|| Error::schema(&blocks_file, &record, "building_years", "non-integer year"))?;
                if year <= 1500 {
                    report.push(&blocks_file, &record, ValidationAction::Dropped, format!("implausible construction year {year}"));
                    continue;
                }
                block.buildings.push(year as i32);
            }
        }
        units[ui].blocks.push(block.id.clone());
        blocks.push(block);
    }

    // parcels
    let mut parcels = Vec::new();
    if let Some(p) = &cfg.parcels {
        let path = resolve(base, p);
        let file = file_label(&path);
        let fc = read_feature_collection(&path)?;
        for (i, f) in fc.features.iter().enumerate() {
            let props = f.properties.as_ref();
            let record = feature_label(i, props);
            let raw = prop_string(&file, &record, props, "land_use")?;
            let land_use = LandUse::parse(&raw)
                .ok_or_else(|| Error::schema(&file, &record, "land_use", format!("unknown land use `{raw}`")))?;
            parcels.push(Parcel {
                geometry: polygon_of(&file, &record, f)?,
                land_use,
            });
        }
    }

    // census
    let census_path = resolve(base, &cfg.census);
    let census_file = file_label(&census_path);
    let mut census_by_unit: HashMap<String, CensusRecord> = HashMap::new();
    for (line, row) in read_rows::<CensusRow>(&census_path)? {
        let record = format!("line {line}");
        for (field, v) in [
            ("unemployment_rate", row.unemployment_rate),
            ("poverty_rate", row.poverty_rate),
            ("residential_mobility_rate", row.residential_mobility_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::schema(&census_file, &record, field, format!("rate {v} outside [0, 1]")));
            }
        }
        let mut shares = [row.share_1, row.share_2, row.share_3, row.share_4, row.share_5, row.share_6];
        if shares.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::schema(&census_file, &record, "share", "negative share"));
        }
        let total: f64 = shares.iter().sum();
        if total <= 0.0 {
            return Err(Error::schema(&census_file, &record, "share", "all ethnic shares are zero"));
        }
        if (total - 1.0).abs() > 1e-6 {
            shares.iter_mut().for_each(|s| *s /= total);
            report.push(
                &census_file,
                &row.unit_id,
                ValidationAction::Repaired,
                format!("ethnic shares summed to {total}; renormalized"),
            );
        }
        if !index.contains_key(&row.unit_id) {
            report.push(&census_file, &record, ValidationAction::Dropped, format!("unknown unit_id {}", row.unit_id));
            continue;
        }
        census_by_unit.insert(
            row.unit_id.clone(),
            CensusRecord {
                unit_id: row.unit_id,
                unemployment_rate: row.unemployment_rate,
                poverty_rate: row.poverty_rate,
                residential_mobility_rate: row.residential_mobility_rate,
                ethnic_shares: shares,
            },
        );
    }
    let mut census = Vec::with_capacity(units.len());
    for u in &units {
        let rec = census_by_unit
            .remove(&u.id)
            .ok_or_else(|| Error::schema(&census_file, &u.id, "unit_id", "no census record for unit"))?;
        census.push(rec);
    }

    // crimes
    let window = (cfg.crime_window_start, cfg.crime_window_end);
    let crimes_path = resolve(base, &cfg.crimes);
    let crimes_file = file_label(&crimes_path);
    let mut crimes = Vec::new();
    let (mut part2, mut outside) = (0usize, 0usize);
    for (line, row) in read_rows::<CrimeRow>(&crimes_path)? {
        let (Some(x), Some(y)) = (row.x, row.y) else {
            report.push(&crimes_file, format!("{} (line {line})", row.id), ValidationAction::Dropped, "missing coordinates");
            continue;
        };
        let Some(category) = CrimeCategory::from_label(&row.category) else {
            part2 += 1;
            continue;
        };
        if row.date < window.0 || row.date >= window.1 {
            outside += 1;
            continue;
        }
        crimes.push(CrimeEvent {
            id: row.id,
            location: Point::new(x, y),
            category,
            date: row.date,
        });
    }
    if part2 > 0 {
        report.push(&crimes_file, "*", ValidationAction::Dropped, format!("{part2} crimes outside UCR Part 1"));
    }
    if outside > 0 {
        report.push(&crimes_file, "*", ValidationAction::Dropped, format!("{outside} crimes outside the aggregation window"));
    }

    // POIs
    let mut mapping: HashMap<String, PoiCategory> = HashMap::new();
    if let Some(p) = &cfg.poi_mapping {
        let path = resolve(base, p);
        let file = file_label(&path);
        for (line, row) in read_rows::<MappingRow>(&path)? {
            let cat = PoiCategory::parse(&row.canonical).ok_or_else(|| {
                Error::schema(&file, format!("line {line}"), "canonical", format!("unknown category `{}`", row.canonical))
            })?;
            mapping.insert(row.raw_category.trim().to_ascii_lowercase(), cat);
        }
    }
    let mut pois = Vec::new();
    if let Some(p) = &cfg.pois {
        let path = resolve(base, p);
        let file = file_label(&path);
        for (line, row) in read_rows::<PoiRow>(&path)? {
            let key = row.category.trim().to_ascii_lowercase();
            match mapping.get(&key).copied().or_else(|| PoiCategory::parse(&key)) {
                Some(category) => pois.push(Poi {
                    location: Point::new(row.x, row.y),
                    category,
                }),
                None => report.push(&file, format!("line {line}"), ValidationAction::Dropped, format!("unmapped category `{}`", row.category)),
            }
        }
    }

    // mobility
    let mut stays = Vec::new();
    if let Some(p) = &cfg.stays {
        let path = resolve(base, p);
        let file = file_label(&path);
        for (line, row) in read_rows::<StayRow>(&path)? {
            if !(row.duration_hours >= 0.0) {
                return Err(Error::schema(&file, format!("line {line}"), "duration_hours", "negative duration"));
            }
            stays.push(Stay {
                person_id: row.person_id,
                day: row.day,
                location: Point::new(row.x, row.y),
                duration_hours: row.duration_hours,
            });
        }
    }
    let mut trips = Vec::new();
    if let Some(p) = &cfg.trips {
        let path = resolve(base, p);
        let file = file_label(&path);
        for (line, row) in read_rows::<TripRow>(&path)? {
            let kind = TripType::parse(&row.kind)
                .ok_or_else(|| Error::schema(&file, format!("line {line}"), "type", format!("unknown trip type `{}`", row.kind)))?;
            trips.push(Trip {
                person_id: row.person_id,
                day: row.day,
                origin: Point::new(row.origin_x, row.origin_y),
                destination: Point::new(row.dest_x, row.dest_y),
                kind,
            });
        }
    }

    // street graph
    let mut street_graph = StreetGraph::default();
    if let (Some(np), Some(ep)) = (&cfg.street_nodes, &cfg.street_edges) {
        let npath = resolve(base, np);
        let nfile = file_label(&npath);
        let mut node_index = HashMap::new();
        for (line, row) in read_rows::<NodeRow>(&npath)? {
            if node_index.insert(row.node_id.clone(), street_graph.nodes.len()).is_some() {
                return Err(Error::schema(&nfile, format!("line {line}"), "node_id", "duplicate node id"));
            }
            street_graph.node_ids.push(row.node_id);
            street_graph.nodes.push(Point::new(row.x, row.y));
        }
        let epath = resolve(base, ep);
        let efile = file_label(&epath);
        for (line, row) in read_rows::<EdgeRow>(&epath)? {
            let rec = format!("line {line}");
            let a = *node_index
                .get(&row.node_id_a)
                .ok_or_else(|| Error::schema(&efile, &rec, "node_id_a", format!("unknown node {}", row.node_id_a)))?;
            let b = *node_index
                .get(&row.node_id_b)
                .ok_or_else(|| Error::schema(&efile, &rec, "node_id_b", format!("unknown node {}", row.node_id_b)))?;
            if !(row.length_m >= 0.0) {
                return Err(Error::schema(&efile, &rec, "length_m", "negative length"));
            }
            street_graph.edges.push((a, b, row.length_m));
        }
    }

    let dataset = CityDataset {
        name: cfg.name.clone(),
        units,
        blocks,
        pois,
        street_graph,
        crimes,
        stays,
        trips,
        parcels,
        census,
        crime_window: window,
    };
    dataset.validate()?;
    Ok((dataset, report))
}

/// Rejects coordinates that look like longitude/latitude degrees.
fn check_projected(file: &str, units: &[SpatialUnit]) -> Result<()> {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for u in units {
        let r = u.geometry.bounding_rect().expect("validated");
        min = (min.0.min(r.min().x), min.1.min(r.min().y));
        max = (max.0.max(r.max().x), max.1.max(r.max().y));
    }
    let in_degree_range = min.0 >= -180.0 && max.0 <= 180.0 && min.1 >= -90.0 && max.1 <= 90.0;
    let tiny_extent = (max.0 - min.0) < 5.0 && (max.1 - min.1) < 5.0;
    if in_degree_range && tiny_extent {
        return Err(Error::NotProjected(file.to_string()));
    }
    Ok(())
}

/// Centroid helper for callers that only hold a polygon.
pub fn polygon_centroid(p: &Polygon<f64>) -> Point<f64> {
    p.centroid().unwrap_or_else(|| Point::new(0.0, 0.0))
}
