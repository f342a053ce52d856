use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::fit::ModelFit;
use crate::{Error, Result};

/// Posterior summaries of `μ = exp(β₀ + Xβ + Eγ)` per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// 5% and 95% posterior quantiles.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Posterior mean of `exp(β₀ + Xβ)`.
    pub fixed: Vec<f64>,
    /// Posterior mean of the multiplier `exp(Eγ)`; 1 without spatial part.
    pub random: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Predicts for standardized covariates `x_new` whose columns are named
/// `names`. `e_new` supplies the spatial basis rows; `None` gives the
/// fixed-effects-only prediction.
pub fn predict(fit: &ModelFit, x_new: &DMatrix<f64>, names: &[String], e_new: Option<&DMatrix<f64>>) -> Result<Prediction> {
    if names != fit.feature_names.as_slice() {
        return Err(Error::FeatureMismatch(format!(
            "expected features [{}], got [{}]",
            fit.feature_names.join(", "),
            names.join(", ")
        )));
    }
    if x_new.ncols() != fit.p() {
        return Err(Error::Dimension(format!("{} columns for {} features", x_new.ncols(), fit.p())));
    }
    let n = x_new.nrows();
    let fixed = fit.fixed_eta(x_new);
    let spatial = match e_new {
        Some(e) => {
            if e.ncols() != fit.l() || e.nrows() != n {
                return Err(Error::Dimension("spatial basis does not match the fit".into()));
            }
            Some(fit.gamma() * e.transpose())
        }
        None => None,
    };
    let s = fixed.nrows();
    let mut out = Prediction {
        mean: vec![0.0; n],
        lower: vec![0.0; n],
        upper: vec![0.0; n],
        fixed: vec![0.0; n],
        random: vec![0.0; n],
    };
    let mut col = vec![0.0; s];
    for i in 0..n {
        let mut fsum = 0.0;
        let mut rsum = 0.0;
        for d in 0..s {
            let f = fixed[(d, i)];
            let r = spatial.as_ref().map_or(0.0, |sp| sp[(d, i)]);
            col[d] = (f + r).exp();
            fsum += f.exp();
            rsum += r.exp();
        }
        out.mean[i] = col.iter().sum::<f64>() / s as f64;
        out.fixed[i] = fsum / s as f64;
        out.random[i] = rsum / s as f64;
        col.sort_by(f64::total_cmp);
        out.lower[i] = quantile(&col, 0.05);
        out.upper[i] = quantile(&col, 0.95);
    }
    Ok(out)
}

/// In-sample prediction including the spatial part of the fit.
pub fn predict_in_sample(fit: &ModelFit) -> Result<Prediction> {
    let e = fit.basis.as_ref().map(|b| &b.e);
    predict(fit, &fit.x, &fit.feature_names, e)
}
