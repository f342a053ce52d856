use chrono::NaiveDate;
use geo::{Area, BoundingRect, Centroid, Point, Polygon, Validation};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half a mile in meters, the default corehood radius.
pub const HALF_MILE_M: f64 = 804.672;

/// A census block group. Units are the cores at which crime is modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialUnit {
    pub id: String,
    pub geometry: Polygon<f64>,
    pub centroid: Point<f64>,
    pub blocks: Vec<String>,
    pub residential_population: f64,
    pub dwelling_units: f64,
}

impl SpatialUnit {
    /// Builds a unit, deriving the centroid from the geometry.
    pub fn new(id: impl Into<String>, geometry: Polygon<f64>) -> Self {
        let centroid = geometry.centroid().unwrap_or_else(|| Point::new(0.0, 0.0));
        SpatialUnit {
            id: id.into(),
            geometry,
            centroid,
            blocks: Vec::new(),
            residential_population: 0.0,
            dwelling_units: 0.0,
        }
    }

    pub fn area_m2(&self) -> f64 {
        self.geometry.unsigned_area()
    }

    pub fn validate(&self) -> Result<()> {
        validate_polygon(&self.id, &self.geometry)?;
        let bbox = self.geometry.bounding_rect().expect("validated polygon is non-empty");
        let c = self.centroid;
        if c.x() < bbox.min().x || c.x() > bbox.max().x || c.y() < bbox.min().y || c.y() > bbox.max().y
        {
            return Err(Error::InvalidGeometry {
                id: self.id.clone(),
                reason: "centroid outside the bounding box".into(),
            });
        }
        if !(self.residential_population >= 0.0) || !(self.dwelling_units >= 0.0) {
            return Err(Error::InvalidGeometry {
                id: self.id.clone(),
                reason: "negative population or dwelling count".into(),
            });
        }
        Ok(())
    }
}

pub(crate) fn validate_polygon(id: &str, polygon: &Polygon<f64>) -> Result<()> {
    if let Err(e) = polygon.check_validation() {
        return Err(Error::InvalidGeometry {
            id: id.to_string(),
            reason: e.to_string(),
        });
    }
    if polygon.unsigned_area() <= 0.0 {
        return Err(Error::InvalidGeometry {
            id: id.to_string(),
            reason: "zero area".into(),
        });
    }
    Ok(())
}

/// A census block inside a unit. `buildings` holds construction years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    pub unit_id: String,
    pub geometry: Polygon<f64>,
    pub area_m2: f64,
    pub buildings: Vec<i32>,
}

impl Block {
    pub fn new(id: impl Into<String>, unit_id: impl Into<String>, geometry: Polygon<f64>) -> Self {
        let area_m2 = geometry.unsigned_area();
        Block {
            id: id.into(),
            unit_id: unit_id.into(),
            geometry,
            area_m2,
            buildings: Vec::new(),
        }
    }

    pub fn centroid(&self) -> Point<f64> {
        self.geometry.centroid().unwrap_or_else(|| Point::new(0.0, 0.0))
    }
}

/// Canonical POI categories: the nine walkability categories plus nightlife,
/// which only feeds the core nightlife counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Grocery,
    Food,
    Shops,
    Schools,
    Entertainment,
    Parks,
    Coffee,
    Banks,
    Books,
    Nightlife,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 10] = [
        PoiCategory::Grocery,
        PoiCategory::Food,
        PoiCategory::Shops,
        PoiCategory::Schools,
        PoiCategory::Entertainment,
        PoiCategory::Parks,
        PoiCategory::Coffee,
        PoiCategory::Banks,
        PoiCategory::Books,
        PoiCategory::Nightlife,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Grocery => "grocery",
            PoiCategory::Food => "food",
            PoiCategory::Shops => "shops",
            PoiCategory::Schools => "schools",
            PoiCategory::Entertainment => "entertainment",
            PoiCategory::Parks => "parks",
            PoiCategory::Coffee => "coffee",
            PoiCategory::Banks => "banks",
            PoiCategory::Books => "books",
            PoiCategory::Nightlife => "nightlife",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Some(match norm.as_str() {
            "grocery" => PoiCategory::Grocery,
            "food" => PoiCategory::Food,
            "shops" | "shop" | "shopping" => PoiCategory::Shops,
            "schools" | "school" => PoiCategory::Schools,
            "entertainment" => PoiCategory::Entertainment,
            "parks" | "parks_and_outside" | "park" => PoiCategory::Parks,
            "coffee" => PoiCategory::Coffee,
            "banks" | "bank" => PoiCategory::Banks,
            "books" | "book" => PoiCategory::Books,
            "nightlife" => PoiCategory::Nightlife,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub location: Point<f64>,
    pub category: PoiCategory,
}

/// UCR Part-1 crime classes; Part-2 offences are dropped at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrimeCategory {
    Violent,
    Property,
}

impl CrimeCategory {
    /// Maps a raw offence label to its Part-1 class. Returns `None` for
    /// offences outside Part 1.
    pub fn from_label(label: &str) -> Option<Self> {
        let norm = label.trim().to_ascii_lowercase().replace(['-', '_'], " ");
        match norm.as_str() {
            "violent" | "murder" | "homicide" | "rape" | "forcible rape" | "robbery"
            | "aggravated assault" => Some(CrimeCategory::Violent),
            "property" | "burglary" | "larceny" | "larceny theft" | "theft"
            | "motor vehicle theft" | "arson" => Some(CrimeCategory::Property),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CrimeCategory::Violent => "violent",
            CrimeCategory::Property => "property",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrimeEvent {
    pub id: String,
    pub location: Point<f64>,
    pub category: CrimeCategory,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stay {
    pub person_id: String,
    pub day: u32,
    pub location: Point<f64>,
    pub duration_hours: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripType {
    /// Home-based work.
    #[serde(rename = "HBW")]
    Hbw,
    /// Home-based other.
    #[serde(rename = "HBO")]
    Hbo,
    /// Non-home-based.
    #[serde(rename = "NHB")]
    Nhb,
}

impl TripType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HBW" => Some(TripType::Hbw),
            "HBO" => Some(TripType::Hbo),
            "NHB" => Some(TripType::Nhb),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TripType::Hbw => "HBW",
            TripType::Hbo => "HBO",
            TripType::Nhb => "NHB",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub person_id: String,
    pub day: u32,
    pub origin: Point<f64>,
    pub destination: Point<f64>,
    pub kind: TripType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandUse {
    Residential,
    CommercialInstitutional,
    ParkRecreational,
    Other,
}

impl LandUse {
    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Some(match norm.as_str() {
            "residential" => LandUse::Residential,
            "commercial_institutional" | "commercial" | "institutional" => {
                LandUse::CommercialInstitutional
            }
            "park_recreational" | "park" | "recreational" => LandUse::ParkRecreational,
            "other" => LandUse::Other,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LandUse::Residential => "residential",
            LandUse::CommercialInstitutional => "commercial_institutional",
            LandUse::ParkRecreational => "park_recreational",
            LandUse::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub geometry: Polygon<f64>,
    pub land_use: LandUse,
}

/// Census attributes of one unit. Ethnic shares cover six groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRecord {
    pub unit_id: String,
    pub unemployment_rate: f64,
    pub poverty_rate: f64,
    pub residential_mobility_rate: f64,
    pub ethnic_shares: [f64; 6],
}

/// Street network: nodes with planar coordinates and undirected edges
/// weighted by length in meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreetGraph {
    pub node_ids: Vec<String>,
    pub nodes: Vec<Point<f64>>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl StreetGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Fraction of nodes in the largest connected component.
    pub fn largest_component_fraction(&self) -> f64 {
        let n = self.nodes.len();
        if n == 0 {
            return 1.0;
        }
        let mut uf = petgraph::unionfind::UnionFind::<usize>::new(n);
        for &(a, b, _) in &self.edges {
            uf.union(a, b);
        }
        let mut sizes = std::collections::HashMap::new();
        for i in 0..n {
            *sizes.entry(uf.find(i)).or_insert(0usize) += 1;
        }
        *sizes.values().max().unwrap_or(&0) as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityDataset {
    pub name: String,
    pub units: Vec<SpatialUnit>,
    pub blocks: Vec<Block>,
    pub pois: Vec<Poi>,
    pub street_graph: StreetGraph,
    pub crimes: Vec<CrimeEvent>,
    pub stays: Vec<Stay>,
    pub trips: Vec<Trip>,
    pub parcels: Vec<Parcel>,
    /// One record per unit, in unit order.
    pub census: Vec<CensusRecord>,
    /// Half-open aggregation window `[start, end)` for crimes.
    pub crime_window: (NaiveDate, NaiveDate),
}

impl CityDataset {
    pub fn unit_index(&self) -> std::collections::HashMap<&str, usize> {
        self.units.iter().enumerate().map(|(i, u)| (u.id.as_str(), i)).collect()
    }

    /// Checks the dataset-level invariants: unit geometry, census alignment,
    /// rate ranges, ethnic share normalization and street connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::NoUnits);
        }
        for u in &self.units {
            u.validate()?;
        }
        if self.census.len() != self.units.len() {
            return Err(Error::Dimension(format!(
                "{} census records for {} units",
                self.census.len(),
                self.units.len()
            )));
        }
        for (u, c) in self.units.iter().zip(&self.census) {
            if u.id != c.unit_id {
                return Err(Error::schema("census", &c.unit_id, "unit_id", "not aligned with unit order"));
            }
            for (name, v) in [
                ("unemployment_rate", c.unemployment_rate),
                ("poverty_rate", c.poverty_rate),
                ("residential_mobility_rate", c.residential_mobility_rate),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::schema("census", &c.unit_id, name, format!("{v} outside [0, 1]")));
                }
            }
            let s: f64 = c.ethnic_shares.iter().sum();
            if (s - 1.0).abs() > 1e-6 || c.ethnic_shares.iter().any(|&x| x < 0.0) {
                return Err(Error::schema("census", &c.unit_id, "ethnic_shares", format!("shares sum to {s}")));
            }
        }
        if self.street_graph.node_count() > 0 && self.street_graph.largest_component_fraction() < 0.95 {
            return Err(Error::Domain(
                "street graph: largest connected component covers < 95% of nodes".into(),
            ));
        }
        Ok(())
    }
}
