//! Nakagawa R², PSIS-LOO, prediction decomposition, model comparison,
//! cross-city transfer and radius sweeps.

mod compare;
mod loo;
mod r2;
mod report;

pub use compare::{compare_fits, compare_models, radius_sweep, write_sweep_csv, ComparisonRow, ComparisonTable, SweepRow};
pub use loo::{gpd_fit, psis_loo, psis_smooth, LooResult, MIN_LOO_DRAWS, PARETO_K_THRESHOLD};
pub use r2::{r2_nakagawa, residual_variance, R2Summary};
pub use report::{
    decompose, evaluate, in_sample_fixed_score, transfer_evaluate, Decomposition, EvaluationReport, TransferReport,
    LOO_SIGN_NOTE,
};
