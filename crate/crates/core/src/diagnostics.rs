//! Spatial autocorrelation, overdispersion and convergence statistics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::linalg::{mean, sample_variance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub reference_distribution: String,
    pub p_value: Option<f64>,
    pub verdict: String,
}

fn quad(w: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    z.dot(&(w * z))
}

/// Classical Moran's I on mean-centered values.
pub fn morans_i(values: &[f64], w: &DMatrix<f64>) -> Result<f64> {
    let n = values.len();
    check_w(w, n)?;
    let m = mean(values);
    let z = DVector::from_iterator(n, values.iter().map(|v| v - m));
    let zz = z.norm_squared();
    if !(zz > 1e-300) || sample_variance(values) <= 1e-14 * (1.0 + m * m) {
        return Err(Error::ZeroVariance);
    }
    let s0 = w.sum();
    Ok(n as f64 / s0 * quad(w, &z) / zz)
}

/// Moran's I on raw (uncentered) residuals: `(n / ΣW) rᵀWr / rᵀr`.
pub fn morans_i_residuals(residuals: &[f64], w: &DMatrix<f64>) -> Result<f64> {
    let n = residuals.len();
    check_w(w, n)?;
    let r = DVector::from_column_slice(residuals);
    let rr = r.norm_squared();
    if !(rr > 0.0) {
        return Err(Error::ZeroVariance);
    }
    if !rr.is_finite() {
        return Err(Error::Domain("non-finite residuals".into()));
    }
    Ok(n as f64 / w.sum() * quad(w, &r) / rr)
}

fn check_w(w: &DMatrix<f64>, n: usize) -> Result<()> {
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::Dimension(format!("weights {}×{} for {n} values", w.nrows(), w.ncols())));
    }
    if !(w.sum() > 0.0) {
        return Err(Error::Domain("weights sum to zero".into()));
    }
    Ok(())
}

/// Permutation reference interval for `I_p` (reported alongside the raw
/// statistic; not a test defined by the model itself).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationInterval {
    pub lower: f64,
    pub upper: f64,
    pub permutations: usize,
}

pub fn residual_moran_permutation(
    residuals: &[f64],
    w: &DMatrix<f64>,
    permutations: usize,
    level: f64,
    seed: u64,
) -> Result<PermutationInterval> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut r = residuals.to_vec();
    let mut stats = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        r.shuffle(&mut rng);
        stats.push(morans_i_residuals(&r, w)?);
    }
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * (permutations - 1) as f64).round() as usize).min(permutations - 1)];
    let a = (1.0 - level) / 2.0;
    Ok(PermutationInterval { lower: q(a), upper: q(1.0 - a), permutations })
}

fn chi2_upper(stat: f64, df: f64) -> f64 {
    let d = ChiSquared::new(df).expect("positive degrees of freedom");
    d.sf(stat).clamp(0.0, 1.0)
}

fn verdict(p: f64) -> String {
    if p < 0.05 {
        "overdispersion detected (reject H0 at 5%)".into()
    } else {
        "no evidence of overdispersion at 5%".into()
    }
}

/// `Σ (y_i − ȳ)² / ȳ` against `χ²(N − 1)`.
pub fn potthoff_whittinghill(y: &[f64]) -> Result<TestResult> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Dimension("need at least two counts".into()));
    }
    let m = mean(y);
    if !(m > 0.0) {
        return Err(Error::Domain("all-zero counts".into()));
    }
    let stat = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / m;
    let p = chi2_upper(stat, (n - 1) as f64);
    Ok(TestResult {
        name: "potthoff_whittinghill".into(),
        statistic: stat,
        reference_distribution: format!("chi-squared({})", n - 1),
        p_value: Some(p),
        verdict: verdict(p),
    })
}

/// Score test for overdispersion, `(Σ (y_i − μ_i)² − nȳ)² / (2 Σ μ_i²)`
/// against `χ²(1)`, `μ` the fitted Poisson means.
pub fn lagrange_multiplier(y: &[f64], mu: &[f64]) -> Result<TestResult> {
    if y.len() != mu.len() {
        return Err(Error::Dimension(format!("{} counts for {} means", y.len(), mu.len())));
    }
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Domain("fitted means must be positive".into()));
    }
    let n = y.len() as f64;
    let ybar = mean(y);
    let s2: f64 = mu.iter().map(|m| m * m).sum();
    let ss: f64 = y.iter().zip(mu).map(|(a, m)| (a - m).powi(2)).sum();
    let stat = (ss - n * ybar).powi(2) / (2.0 * s2);
    let p = chi2_upper(stat, 1.0);
    Ok(TestResult {
        name: "lagrange_multiplier".into(),
        statistic: stat,
        reference_distribution: "chi-squared(1)".into(),
        p_value: Some(p),
        verdict: verdict(p),
    })
}

/// Poisson GLM means `exp(Xb)` by iteratively reweighted least squares; an
/// intercept is added to `x`.
pub fn poisson_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("{} rows for {n} counts", x.nrows())));
    }
    let ybar = mean(y);
    if !(ybar > 0.0) {
        return Err(Error::Domain("all counts are zero".into()));
    }
    let p = x.ncols() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut b = DVector::zeros(p);
    b[0] = ybar.ln();
    for _ in 0..100 {
        let eta = &design * &b;
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let z = eta[i] + (y[i] - mu[i]) / mu[i];
            let row = design.row(i);
            xtwx += row.transpose() * row * mu[i];
            xtwz += row.transpose() * (mu[i] * z);
        }
        let next = xtwx
            .cholesky()
            .ok_or_else(|| Error::RankDeficient { columns: vec!["poisson design".into()] })?
            .solve(&xtwz);
        let change = (&next - &b).amax();
        b = next;
        if change < 1e-10 {
            break;
        }
    }
    Ok((&design * &b).iter().map(|e| e.exp()).collect())
}

/// Split R-hat of one parameter; each chain is halved.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Domain("R-hat needs at least two chains".into()));
    }
    let len = chains[0].len();
    if len < 10 || chains.iter().any(|c| c.len() != len) {
        return Err(Error::Dimension("chains must have equal length >= 10".into()));
    }
    let half = len / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[len - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = parts.iter().map(|p| sample_variance(p)).collect();
    let w = mean(&vars);
    let b = n * sample_variance(&means);
    if !(w > 0.0) {
        return Ok(if b > 0.0 { f64::INFINITY } else { 1.0 });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Split R-hat per parameter from per-chain draw matrices (iterations ×
/// parameters).
pub fn gelman_rubin(chains: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    if chains.len() < 2 {
        return Err(Error::Domain("R-hat needs at least two chains".into()));
    }
    let d = chains[0].ncols();
    (0..d)
        .map(|j| {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j).iter().copied().collect()).collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            split_rhat(&refs)
        })
        .collect()
}
