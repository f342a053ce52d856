use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{evaluate, EvaluationReport, LOO_SIGN_NOTE};
use crate::connectivity::ConnectivityKind;
use crate::features::WalkabilityConfig;
use crate::model::{ModelFit, ModelSpec};
use crate::pipeline::PreparedCity;
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub features: String,
    pub variant: String,
    pub connectivity: String,
    pub radius_m: f64,
    pub r2_marginal: f64,
    pub r2_conditional: f64,
    pub loo_elpd: f64,
    pub loo_se: f64,
    pub residual_moran: f64,
    pub pareto_flags: usize,
    pub max_rhat: f64,
    pub divergent: usize,
    pub runtime_s: f64,
}

/// Rows sorted by LOO elpd, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub fingerprint: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv(&self, path: &Path, stamp: &[(String, String)]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        let mut notes = stamp.to_vec();
        notes.push(("note".into(), LOO_SIGN_NOTE.into()));
        crate::features::prepend_comments(path, &notes)
    }

    pub fn render(&self) -> String {
        let mut s = Vec::new();
        let _ = writeln!(
            s,
            "{:<28} {:<8} {:<11} {:>7} {:>7} {:>11} {:>8} {:>5}",
            "features", "variant", "connect", "R2_m", "R2_c", "LOO", "I_p", "k>.7"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:<8} {:<11} {:>7.3} {:>7.3} {:>11.2} {:>8.4} {:>5}",
                r.features, r.variant, r.connectivity, r.r2_marginal, r.r2_conditional, r.loo_elpd, r.residual_moran, r.pareto_flags
            );
        }
        String::from_utf8(s).unwrap_or_default()
    }

    /// Row index for a given feature label and variant.
    pub fn find(&self, features: &str, variant: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.features == features && r.variant == variant)
    }
}

fn row(fit: &ModelFit, rep: &EvaluationReport) -> ComparisonRow {
    ComparisonRow {
        features: fit.spec.features.to_string(),
        variant: fit.spec.variant.to_string(),
        connectivity: if fit.spec.variant.is_spatial() { fit.spec.connectivity.to_string() } else { "-".into() },
        radius_m: fit.spec.corehood_radius_m,
        r2_marginal: rep.r2.marginal,
        r2_conditional: rep.r2.conditional,
        loo_elpd: rep.loo.elpd,
        loo_se: rep.loo.se,
        residual_moran: rep.residual_moran,
        pareto_flags: rep.pareto_flags,
        max_rhat: rep.max_rhat.1,
        divergent: rep.divergent,
        runtime_s: rep.runtime_s,
    }
}

/// Builds the table from evaluated fits, which must share a fingerprint.
pub fn compare_fits(fits: &[(ModelFit, EvaluationReport)]) -> Result<ComparisonTable> {
    let Some((first, _)) = fits.first() else {
        return Err(Error::config("specs", "nothing to compare"));
    };
    for (f, _) in fits {
        if f.fingerprint != first.fingerprint {
            return Err(Error::Fingerprint(format!(
                "{} was fit on different data than {}",
                f.spec.label(),
                first.spec.label()
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = fits.iter().map(|(f, r)| row(f, r)).collect();
    rows.sort_by(|a, b| b.loo_elpd.total_cmp(&a.loo_elpd));
    Ok(ComparisonTable { fingerprint: first.fingerprint.clone(), rows })
}

/// Fits and evaluates every spec on one prepared city, at most `jobs` fits
/// (and their chains) running at a time. Residual `I_p` always uses the
/// contiguity matrix so rows are comparable.
pub fn compare_models(
    city: &PreparedCity,
    specs: &[ModelSpec],
    jobs: usize,
    checked: bool,
) -> Result<(ComparisonTable, Vec<(ModelFit, EvaluationReport)>)> {
    for s in specs {
        s.validate()?;
    }
    let w = city.connectivity(ConnectivityKind::Contiguity)?.matrix;
    let results = par::with_jobs(jobs, || {
        par::map_indexed(specs.len(), |k| -> Result<(ModelFit, EvaluationReport)> {
            let (fit, _) = city.fit(&specs[k], checked)?;
            let rep = evaluate(&fit, &w, 0)?;
            Ok((fit, rep))
        })
    });
    let fits = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((compare_fits(&fits)?, fits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius_m: f64,
    pub mean_corehood_size: f64,
    pub loo_elpd: Option<f64>,
    pub loo_se: Option<f64>,
    pub r2_marginal: Option<f64>,
    pub r2_conditional: Option<f64>,
    pub warning: Option<String>,
}

/// Re-runs corehoods, features and the fit at each radius.
pub fn radius_sweep(
    city: &PreparedCity,
    radii: &[f64],
    spec: &ModelSpec,
    walk: &WalkabilityConfig,
    jobs: usize,
    checked: bool,
) -> Result<Vec<SweepRow>> {
    if radii.is_empty() {
        return Err(Error::config("radii", "need at least one radius"));
    }
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let prepared = city.with_radius(r, walk)?;
        let mean_size =
            prepared.corehoods.iter().map(|c| c.len() as f64).sum::<f64>() / prepared.corehoods.len() as f64;
        let mut spec_r = spec.clone();
        spec_r.corehood_radius_m = r;
        let degenerate = prepared.corehoods.iter().all(|c| c.len() == 1);
        let outcome = if degenerate {
            Err(Error::Domain(format!("every corehood at radius {r} m contains only its core")))
        } else {
            compare_models(&prepared, std::slice::from_ref(&spec_r), jobs, checked)
        };
        rows.push(match outcome {
            Ok((table, _)) => {
                let t = &table.rows[0];
                SweepRow {
                    radius_m: r,
                    mean_corehood_size: mean_size,
                    loo_elpd: Some(t.loo_elpd),
                    loo_se: Some(t.loo_se),
                    r2_marginal: Some(t.r2_marginal),
                    r2_conditional: Some(t.r2_conditional),
                    warning: None,
                }
            }
            Err(e) => {
                log::warn!("radius {r} m: {e}");
                SweepRow {
                    radius_m: r,
                    mean_corehood_size: mean_size,
                    loo_elpd: None,
                    loo_se: None,
                    r2_marginal: None,
                    r2_conditional: None,
                    warning: Some(e.to_string()),
                }
            }
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path, stamp: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    crate::features::prepend_comments(path, stamp)
}
