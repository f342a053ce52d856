//! Crime modeling on census block groups and their surrounding "corehoods".
//!
//! The crate covers the whole pipeline:
//!
//! * [`geo_core`]: city data model, ingestion, corehood construction and
//!   crime-to-unit assignment.
//! * [`features`]: core, social-disorganization, built-environment and
//!   mobility covariates.
//! * [`connectivity`]: contiguity, distance and mobility spatial matrices.
//! * [`spatial_filter`]: Moran eigenvector basis of `MCM`.
//! * [`model`]: negative binomial likelihood, the four prior variants and a
//!   NUTS sampler.
//! * [`diagnostics`]: Moran's I, overdispersion tests and split R-hat.
//! * [`evaluation`]: Nakagawa R², PSIS-LOO, decomposition, model comparison,
//!   cross-city transfer and corehood-radius sweeps.
//! * [`synthgen`]: synthetic cities with known ground truth.
//! * [`pipeline`]: run configuration and the staged batch pipeline.

pub mod connectivity;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geo_core;
pub mod linalg;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod spatial_filter;
pub mod synthgen;

pub use error::{Error, Result};
