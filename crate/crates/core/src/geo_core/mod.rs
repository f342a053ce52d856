//! City data model, ingestion, corehoods and crime assignment.

mod corehood;
mod crimes;
mod export;
mod ingest;
mod types;

pub use corehood::{build_corehoods, locate_point, unit_rects, Corehood};
pub use crimes::{assign_crimes, CrimeCounts, DEFAULT_CRIME_BUFFER_M};
pub use export::write_city;
pub use ingest::{ingest_city, polygon_centroid, IngestConfig, ValidationAction, ValidationEntry, ValidationReport};
pub(crate) use ingest::toml_field;
pub use types::*;
