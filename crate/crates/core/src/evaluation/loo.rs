use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::log_sum_exp;
use crate::{Error, Result};

pub const PARETO_K_THRESHOLD: f64 = 0.7;
pub const MIN_LOO_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    /// Σ elpd_i (negative for counts; larger is better).
    pub elpd: f64,
    pub se: f64,
    /// In-sample log pointwise predictive density Σ log mean_s p(y_i | θ_s).
    pub lppd: f64,
    /// Effective number of parameters `lppd − elpd`.
    pub p_loo: f64,
    pub pointwise: Vec<f64>,
    pub pareto_k: Vec<f64>,
}

impl LooResult {
    pub fn n_high_k(&self) -> usize {
        self.pareto_k.iter().filter(|&&k| k > PARETO_K_THRESHOLD).count()
    }
}

/// Generalized Pareto fit by the Zhang–Stephens profile-likelihood
/// estimator with the weakly informative shrinkage of `k` towards 0.5.
/// `x` must be sorted ascending and positive. Returns `(k, σ)`.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let xstar = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let xmax = x[n - 1];
    let thetas: Vec<f64> = (1..=m)
        .map(|j| 1.0 / xmax + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar)
        .collect();
    let profile: Vec<f64> = thetas
        .iter()
        .map(|&t| {
            let a = -t;
            let k = x.iter().map(|&v| (a * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((a / k).ln() - k - 1.0)
        })
        .collect();
    let lse = log_sum_exp(profile.iter().copied());
    let theta: f64 = thetas.iter().zip(&profile).map(|(t, l)| t * (l - lse).exp()).sum();
    let k = x.iter().map(|&v| (-theta * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta;
    let a = 10.0;
    let k = k * n as f64 / (n as f64 + a) + a * 0.5 / (n as f64 + a);
    (k, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Pareto-smoothed log weights for one unit's raw log importance ratios.
/// Returns unnormalized smoothed log weights and `k̂`.
pub fn psis_smooth(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    if tail_len < 5 || tail_len >= s {
        return (lw, f64::INFINITY);
    }
    let cutoff = lw[order[s - tail_len - 1]];
    let tail_idx = &order[s - tail_len..];
    let tail_max = lw[tail_idx[tail_len - 1]];
    if tail_max <= cutoff {
        // no variation in the tail: weights are already flat
        return (lw, 0.0);
    }
    let exp_cut = cutoff.exp();
    let x: Vec<f64> = tail_idx.iter().map(|&i| lw[i].exp() - exp_cut).collect();
    let (k, sigma) = gpd_fit(&x);
    if k.is_finite() {
        for (r, &i) in tail_idx.iter().enumerate() {
            let p = (r as f64 + 0.5) / tail_len as f64;
            lw[i] = (gpd_quantile(p, k, sigma) + exp_cut).ln().min(0.0);
        }
    }
    (lw, k)
}

/// PSIS-LOO from an S×N pointwise log-likelihood matrix.
pub fn psis_loo(loglik: &DMatrix<f64>) -> Result<LooResult> {
    let (s, n) = loglik.shape();
    if s < MIN_LOO_DRAWS {
        return Err(Error::Domain(format!("PSIS-LOO needs at least {MIN_LOO_DRAWS} draws, got {s}")));
    }
    let mut pointwise = Vec::with_capacity(n);
    let mut ks = Vec::with_capacity(n);
    let mut lppd = 0.0;
    for i in 0..n {
        let ll: Vec<f64> = loglik.column(i).iter().copied().collect();
        if ll.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogLik { unit: i });
        }
        lppd += log_sum_exp(ll.iter().copied()) - (s as f64).ln();
        let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
        let (lw, k) = psis_smooth(&ratios);
        let norm = log_sum_exp(lw.iter().copied());
        let elpd_i = log_sum_exp(lw.iter().zip(&ll).map(|(w, l)| w + l)) - norm;
        pointwise.push(elpd_i);
        ks.push(k);
    }
    let elpd: f64 = pointwise.iter().sum();
    let m = elpd / n as f64;
    let var = pointwise.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    Ok(LooResult { elpd, se: (n as f64 * var).sqrt(), lppd, p_loo: lppd - elpd, pointwise, pareto_k: ks })
}
