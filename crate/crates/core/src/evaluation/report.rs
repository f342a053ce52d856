use std::io::Write;
use std::path::Path;

use geojson::{Feature, FeatureCollection, Geometry, GeometryValue, JsonObject, JsonValue};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::loo::{psis_loo, LooResult};
use super::r2::{r2_nakagawa, R2Summary};
use crate::diagnostics::{morans_i_residuals, residual_moran_permutation, PermutationInterval};
use crate::features::RawFeatures;
use crate::geo_core::SpatialUnit;
use crate::linalg::{log_sum_exp, mean, pearson};
use crate::model::{nb2_logpmf, predict, predict_in_sample, ModelFit};
use crate::{Error, Result};

pub const LOO_SIGN_NOTE: &str =
    "LOO elpd is the sum of pointwise log predictive densities: negative, and larger (closer to zero) is better";

/// Per-unit split of the posterior-mean prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub core_ids: Vec<String>,
    /// Posterior mean of `exp(β₀ + Xβ)`.
    pub fixed: Vec<f64>,
    /// Posterior mean of the multiplier `exp(Eγ)`.
    pub random: Vec<f64>,
    /// Posterior mean of `μ`.
    pub mu: Vec<f64>,
    /// `y − μ̄`.
    pub residual: Vec<f64>,
}

pub fn decompose(fit: &ModelFit) -> Result<Decomposition> {
    let p = predict_in_sample(fit)?;
    let residual = fit.y.iter().zip(&p.mean).map(|(&y, m)| y as f64 - m).collect();
    Ok(Decomposition { core_ids: fit.core_ids.clone(), fixed: p.fixed, random: p.random, mu: p.mean, residual })
}

impl Decomposition {
    pub fn write_geojson(&self, path: &Path, units: &[SpatialUnit], extra: &[(&str, &[f64])]) -> Result<()> {
        if units.len() != self.core_ids.len() {
            return Err(Error::Dimension(format!("{} units for {} cores", units.len(), self.core_ids.len())));
        }
        let features = units
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let mut props = JsonObject::new();
                props.insert("id".into(), JsonValue::from(u.id.clone()));
                props.insert("fixed".into(), JsonValue::from(self.fixed[i]));
                props.insert("random".into(), JsonValue::from(self.random[i]));
                props.insert("mu".into(), JsonValue::from(self.mu[i]));
                props.insert("residual".into(), JsonValue::from(self.residual[i]));
                for (name, vals) in extra {
                    props.insert(name.to_string(), JsonValue::from(vals[i]));
                }
                Feature {
                    geometry: Some(Geometry::new(GeometryValue::from(&u.geometry))),
                    properties: Some(props),
                    ..Default::default()
                }
            })
            .collect();
        let fc = FeatureCollection { bbox: None, features, foreign_members: None };
        std::fs::write(path, fc.to_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub label: String,
    pub fingerprint: String,
    pub r2: R2Summary,
    pub loo: LooResult,
    /// `I_p` of the raw residuals `y − μ̄`.
    pub residual_moran: f64,
    /// Permutation reference interval for `I_p` (extension; not a test).
    pub residual_moran_interval: Option<PermutationInterval>,
    pub pareto_flags: usize,
    pub max_rhat: (String, f64),
    pub divergent: usize,
    pub decomposition: Decomposition,
    pub runtime_s: f64,
}

/// Scores a fit. `w` is the weight matrix used for the residual Moran's I;
/// `permutations = 0` skips the reference interval.
pub fn evaluate(fit: &ModelFit, w: &DMatrix<f64>, permutations: usize) -> Result<EvaluationReport> {
    let r2 = r2_nakagawa(fit)?;
    let loo = psis_loo(&fit.samples.loglik)?;
    let decomposition = decompose(fit)?;
    let residual_moran = morans_i_residuals(&decomposition.residual, w)?;
    let residual_moran_interval = if permutations > 0 {
        Some(residual_moran_permutation(&decomposition.residual, w, permutations, 0.95, fit.samples.seed)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        label: fit.spec.label(),
        fingerprint: fit.fingerprint.clone(),
        pareto_flags: loo.n_high_k(),
        r2,
        loo,
        residual_moran,
        residual_moran_interval,
        max_rhat: fit.samples.max_rhat(),
        divergent: fit.samples.divergent(),
        decomposition,
        runtime_s: fit.runtime_s,
    })
}

impl EvaluationReport {
    /// Writes `evaluation.json`, `pointwise.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path, stamp: &[(String, String)]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("evaluation.json"), serde_json::to_string_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join("pointwise.csv"))?;
        w.write_record(["core_id", "elpd_loo", "pareto_k", "fixed", "random", "mu", "residual"])?;
        let d = &self.decomposition;
        for i in 0..d.core_ids.len() {
            w.write_record([
                d.core_ids[i].clone(),
                self.loo.pointwise[i].to_string(),
                self.loo.pareto_k[i].to_string(),
                d.fixed[i].to_string(),
                d.random[i].to_string(),
                d.mu[i].to_string(),
                d.residual[i].to_string(),
            ])?;
        }
        w.flush()?;
        crate::features::prepend_comments(&dir.join("pointwise.csv"), stamp)?;
        let mut f = std::fs::File::create(dir.join("summary.txt"))?;
        for (k, v) in stamp {
            writeln!(f, "# {k}: {v}")?;
        }
        writeln!(f, "# {LOO_SIGN_NOTE}")?;
        write!(f, "{}", self.summary())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let r = &self.r2;
        s += &format!("model: {}\n", self.label);
        s += &format!("R2 marginal: {:.4}  conditional: {:.4}\n", r.marginal, r.conditional);
        s += &format!(
            "variance components: fixed {:.4}  random {:.4}  residual {:.4}\n",
            r.var_fixed, r.var_random, r.var_residual
        );
        s += &format!("LOO elpd: {:.2} (se {:.2}), p_loo {:.2}\n", self.loo.elpd, self.loo.se, self.loo.p_loo);
        s += &format!("pareto k > 0.7: {} of {}\n", self.pareto_flags, self.loo.pareto_k.len());
        s += &format!("residual I_p: {:.4}", self.residual_moran);
        if let Some(iv) = &self.residual_moran_interval {
            s += &format!(
                "  (permutation 95% reference [{:.4}, {:.4}], {} shuffles)",
                iv.lower, iv.upper, iv.permutations
            );
        }
        s += "\n";
        s += &format!("max R-hat: {} {:.4}\ndivergent transitions: {}\n", self.max_rhat.0, self.max_rhat.1, self.divergent);
        s += &format!("runtime: {:.1} s\n", self.runtime_s);
        s
    }
}

/// Fixed-effects-only predictive performance on another city (or the same
/// one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source_fingerprint: String,
    pub features: Vec<String>,
    pub n: usize,
    /// `1 − Σ(y − μ̄)² / Σ(y − ȳ)²`; negative when worse than the mean.
    pub r2_score: f64,
    /// Squared correlation between `y` and `μ̄`.
    pub pseudo_r2: f64,
    /// Σ_i log mean_s NB(y_i | μ_is, φ_s).
    pub log_score: f64,
    pub mean_log_score: f64,
    pub pointwise_log_score: Vec<f64>,
    pub predicted: Vec<f64>,
}

fn score(fit: &ModelFit, x: &DMatrix<f64>, names: &[String], y: &[u64]) -> Result<TransferReport> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows for {} counts", x.nrows(), y.len())));
    }
    let pred = predict(fit, x, names, None)?;
    let eta = fit.fixed_eta(x);
    let phi = fit.phi();
    let s = eta.nrows();
    let mut pointwise = Vec::with_capacity(y.len());
    for (i, &yi) in y.iter().enumerate() {
        let lg = ln_gamma(yi as f64 + 1.0);
        let lps: Vec<f64> = (0..s)
            .map(|d| crate::model::nb2_logpmf_unchecked(yi as f64, lg, eta[(d, i)], phi[d]))
            .collect();
        let v = log_sum_exp(lps.iter().copied()) - (s as f64).ln();
        if !v.is_finite() {
            // fall back to the checked pmf to surface the domain error
            nb2_logpmf(yi, eta[(0, i)].exp(), phi[0])?;
            return Err(Error::NonFiniteLogLik { unit: i });
        }
        pointwise.push(v);
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let ym = mean(&yf);
    let sse: f64 = yf.iter().zip(&pred.mean).map(|(a, b)| (a - b).powi(2)).sum();
    let sst: f64 = yf.iter().map(|a| (a - ym).powi(2)).sum();
    let r = pearson(&yf, &pred.mean);
    let log_score: f64 = pointwise.iter().sum();
    Ok(TransferReport {
        source_fingerprint: fit.fingerprint.clone(),
        features: names.to_vec(),
        n: y.len(),
        r2_score: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
        pseudo_r2: if r.is_finite() { r * r } else { 0.0 },
        log_score,
        mean_log_score: log_score / y.len().max(1) as f64,
        pointwise_log_score: pointwise,
        predicted: pred.mean,
    })
}

/// Applies a fit's coefficients to destination features standardized with
/// the destination's own statistics. The spatial part is omitted.
pub fn transfer_evaluate(fit: &ModelFit, dest: &RawFeatures, dest_y: &[u64]) -> Result<TransferReport> {
    let missing: Vec<&str> = fit
        .feature_names
        .iter()
        .filter(|n| !dest.names.contains(n))
        .map(|s| s.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(format!("destination lacks features: {}", missing.join(", "))));
    }
    let cols = crate::features::FeatureSelection::Columns(fit.feature_names.clone());
    let fm = dest.select(&cols)?.standardize();
    if fm.names != fit.feature_names {
        let dropped: Vec<&str> = fit
            .feature_names
            .iter()
            .filter(|n| !fm.names.contains(n))
            .map(|s| s.as_str())
            .collect();
        return Err(Error::FeatureMismatch(format!("constant in destination: {}", dropped.join(", "))));
    }
    score(fit, &fm.x, &fm.names, dest_y)
}

/// The transfer score of a fit on its own training data.
pub fn in_sample_fixed_score(fit: &ModelFit) -> Result<TransferReport> {
    score(fit, &fit.x, &fit.feature_names, &fit.y)
}
