//! Run configuration and the staged batch pipeline.

mod config;
mod prepare;
mod stages;

pub use config::{
    check_radii, parse_model_entry, DataSource, Overrides, RunConfig, DEFAULT_PERMUTATIONS, TABLE_SELECTIONS,
};
pub use prepare::{ModelInputs, PreparedCity};
pub use stages::{
    load_city, load_fit, load_prepared, mark_failed, run_pipeline, stage_compare, stage_data, stage_diagnose,
    stage_evaluate, stage_features, stage_fit, stage_sweep, stage_transfer, stamp_json, RunLayout, FAILED_MARKER,
};
