use serde::{Deserialize, Serialize};

use crate::linalg::sample_variance;
use crate::model::ModelFit;
use crate::{Error, Result};

/// Marginal and conditional R² for NB GLMMs.
///
/// `marginal`/`conditional` are posterior means of the per-draw ratios; the
/// `*_of_means` fields use posterior-mean variance components instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Summary {
    pub marginal: f64,
    pub conditional: f64,
    pub marginal_of_means: f64,
    pub conditional_of_means: f64,
    /// Posterior means of σ_f², σ_r² and σ_ε².
    pub var_fixed: f64,
    pub var_random: f64,
    pub var_residual: f64,
}

/// Observation-level variance `ln(1 + 1/ȳ + 1/φ)`.
pub fn residual_variance(y_mean: f64, phi: f64) -> f64 {
    (1.0 / y_mean + 1.0 / phi).ln_1p()
}

pub fn r2_nakagawa(fit: &ModelFit) -> Result<R2Summary> {
    let n = fit.n();
    let y_mean = fit.y.iter().sum::<u64>() as f64 / n.max(1) as f64;
    if !(y_mean > 0.0) {
        return Err(Error::Domain("R² needs a positive mean count".into()));
    }
    let s = fit.samples.n_draws();
    if s == 0 {
        return Err(Error::Domain("fit has no draws".into()));
    }
    let xb = fit.beta() * fit.x.transpose();
    let eg = fit.spatial_eta();
    let phi = fit.phi();
    let (mut rm, mut rc) = (0.0, 0.0);
    let (mut vf_sum, mut vr_sum, mut ve_sum) = (0.0, 0.0, 0.0);
    let mut row = vec![0.0; n];
    for d in 0..s {
        row.iter_mut().enumerate().for_each(|(i, v)| *v = xb[(d, i)]);
        let vf = sample_variance(&row);
        let vr = if fit.l() > 0 {
            row.iter_mut().enumerate().for_each(|(i, v)| *v = eg[(d, i)]);
            sample_variance(&row)
        } else {
            0.0
        };
        let ve = residual_variance(y_mean, phi[d]);
        let total = vf + vr + ve;
        rm += vf / total;
        rc += (vf + vr) / total;
        vf_sum += vf;
        vr_sum += vr;
        ve_sum += ve;
    }
    let sf = s as f64;
    let (vf, vr, ve) = (vf_sum / sf, vr_sum / sf, ve_sum / sf);
    Ok(R2Summary {
        marginal: rm / sf,
        conditional: rc / sf,
        marginal_of_means: vf / (vf + vr + ve),
        conditional_of_means: (vf + vr) / (vf + vr + ve),
        var_fixed: vf,
        var_random: vr,
        var_residual: ve,
    })
}

