//! Joint log density of the four prior variants on the unconstrained scale.
//!
//! Unconstrained vector layout: `[β₀, β̃ (P), γ (L), ln τ, ln φ, hypers]`
//! where `β̃ = R* β` lives in the decorrelated QR space and the hypers are
//! `ln ρ` (BSF), `ln ρ, logit(ν/2)` (ESF) or `ln ρ, ln ω` (RE-ESF). The log
//! density includes the Jacobians of these transforms.
//!
//! ESF and RE-ESF store standardized `z` in the γ slots, with
//! `γ_l = ρ √λ_l z_l` and `z ~ N(0, 1)`; BSF stores γ directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::nb2::{nb2_grad, nb2_logpmf_unchecked};
use super::qr::QrDecorrelation;
use super::spec::{RhoPriorParam, Variant};
use crate::spatial_filter::EigenBasis;
use crate::{Error, Result};

/// BSF precision prior `ρ ~ Γ(0.5, 2000)`.
pub const BSF_RHO_SHAPE: f64 = 0.5;
pub const BSF_RHO_SECOND: f64 = 2000.0;
/// ESF degrees of freedom prior `ν ~ Γ(2, 0.1)` truncated to `(0, 2]`.
pub const ESF_NU_SHAPE: f64 = 2.0;
pub const ESF_NU_RATE: f64 = 0.1;
pub const ESF_NU_MAX: f64 = 2.0;
/// RE-ESF shape prior `ω⁻¹ ~ Γ(2, 5)`.
pub const RE_ESF_OMEGA_INV_SHAPE: f64 = 2.0;
pub const RE_ESF_OMEGA_INV_RATE: f64 = 5.0;
/// Half-Cauchy scale of the NB shape prior.
pub const PHI_PRIOR_SCALE: f64 = 5.0;

/// Inputs of a fit: integer counts, standardized covariates, and for the
/// spatial variants the eigenbasis (plus the Laplacian for BSF).
#[derive(Debug, Clone)]
pub struct ModelData {
    pub y: Vec<u64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub basis: Option<EigenBasis>,
    pub laplacian: Option<DMatrix<f64>>,
}

impl ModelData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y_mean(&self) -> f64 {
        self.y.iter().sum::<u64>() as f64 / self.y.len().max(1) as f64
    }
}

/// Constrained parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: f64,
    pub phi: f64,
    pub rho: Option<f64>,
    pub nu: Option<f64>,
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub variant: Variant,
    pub p: usize,
    pub l: usize,
}

impl Layout {
    pub fn beta(&self) -> std::ops::Range<usize> {
        1..1 + self.p
    }
    pub fn gamma(&self) -> std::ops::Range<usize> {
        1 + self.p..1 + self.p + self.l
    }
    pub fn log_tau(&self) -> usize {
        1 + self.p + self.l
    }
    pub fn log_phi(&self) -> usize {
        self.log_tau() + 1
    }
    pub fn log_rho(&self) -> Option<usize> {
        self.variant.is_spatial().then(|| self.log_phi() + 1)
    }
    /// `logit(ν/2)` for ESF, `ln ω` for RE-ESF.
    pub fn shape(&self) -> Option<usize> {
        matches!(self.variant, Variant::Esf | Variant::ReEsf).then(|| self.log_phi() + 2)
    }
    pub fn dim(&self) -> usize {
        self.log_phi()
            + 1
            + match self.variant {
                Variant::NbRidge => 0,
                Variant::Bsf => 1,
                Variant::Esf | Variant::ReEsf => 2,
            }
    }

    /// Names of the stored (constrained) draw columns.
    pub fn column_names(&self, features: &[String]) -> Vec<String> {
        let mut names = vec!["beta0".to_string()];
        names.extend(features.iter().map(|f| format!("beta[{f}]")));
        names.extend((0..self.l).map(|l| format!("gamma[{l}]")));
        names.push("tau".into());
        names.push("phi".into());
        match self.variant {
            Variant::NbRidge => {}
            Variant::Bsf => names.push("rho".into()),
            Variant::Esf => {
                names.push("rho".into());
                names.push("nu".into());
            }
            Variant::ReEsf => {
                names.push("rho".into());
                names.push("omega".into());
            }
        }
        names
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Log density evaluator with everything that does not depend on the
/// parameters precomputed.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub layout: Layout,
    pub rho_prior: RhoPriorParam,
    pub qr: QrDecorrelation,
    y: Vec<f64>,
    lgamma_y1: Vec<f64>,
    e: DMatrix<f64>,
    /// `EᵀQE` for BSF.
    k: DMatrix<f64>,
    ln_lambda: Vec<f64>,
    ln_sum_lambda: f64,
}

/// Log density split by parameter block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub likelihood: f64,
    pub fixed_prior: f64,
    pub spatial_prior: f64,
    pub hyper_prior: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.fixed_prior + self.spatial_prior + self.hyper_prior
    }
}

impl Posterior {
    pub fn new(data: &ModelData, variant: Variant, rho_prior: RhoPriorParam) -> Result<Self> {
        let n = data.n();
        if data.x.nrows() != n {
            return Err(Error::Dimension(format!("{} rows of X for {n} counts", data.x.nrows())));
        }
        if n == 0 {
            return Err(Error::NoUnits);
        }
        let qr = QrDecorrelation::new(&data.x, Some(&data.names))?;
        let (e, lambdas) = if variant.is_spatial() {
            let b = data
                .basis
                .as_ref()
                .ok_or_else(|| Error::config("variant", format!("{variant} requires an eigenbasis")))?;
            if b.n() != n {
                return Err(Error::Dimension(format!("eigenbasis has {} rows for {n} units", b.n())));
            }
            (b.e.clone(), b.lambdas.clone())
        } else {
            (DMatrix::zeros(n, 0), Vec::new())
        };
        let k = if variant == Variant::Bsf {
            let q = data
                .laplacian
                .as_ref()
                .ok_or_else(|| Error::config("variant", "BSF requires the connectivity Laplacian"))?;
            let k = e.transpose() * q * &e;
            (&k + k.transpose()) * 0.5
        } else {
            DMatrix::zeros(e.ncols(), e.ncols())
        };
        let ln_lambda: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
        let ln_sum_lambda = lambdas.iter().sum::<f64>().ln();
        let y: Vec<f64> = data.y.iter().map(|&v| v as f64).collect();
        let lgamma_y1 = y.iter().map(|&v| ln_gamma(v + 1.0)).collect();
        Ok(Posterior {
            layout: Layout { variant, p: data.x.ncols(), l: e.ncols() },
            rho_prior,
            qr,
            y,
            lgamma_y1,
            e,
            k,
            ln_lambda,
            ln_sum_lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn rho_rate(&self) -> f64 {
        match self.rho_prior {
            RhoPriorParam::Rate => BSF_RHO_SECOND,
            RhoPriorParam::Scale => 1.0 / BSF_RHO_SECOND,
        }
    }

    fn non_centered(&self) -> bool {
        matches!(self.layout.variant, Variant::Esf | Variant::ReEsf)
    }

    /// Prior sd of each γ_l and `d ln sd_l / d(shape coordinate)`.
    fn gamma_scales(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lay = &self.layout;
        let log_rho = theta[lay.log_rho().unwrap()];
        match lay.variant {
            Variant::Esf => (
                self.ln_lambda.iter().map(|l| (log_rho + 0.5 * l).exp()).collect(),
                vec![0.0; lay.l],
            ),
            Variant::ReEsf => {
                let omega = theta[lay.shape().unwrap()].exp();
                let (ln_lw, d) = self.ln_lambda_omega(omega);
                (
                    ln_lw.iter().map(|l| (log_rho + 0.5 * l).exp()).collect(),
                    d.iter().map(|v| 0.5 * v * omega).collect(),
                )
            }
            _ => (Vec::new(), Vec::new()),
        }
    }

    /// Spatial coefficients γ on their natural scale.
    fn gamma_of(&self, theta: &[f64]) -> Vec<f64> {
        let raw = &theta[self.layout.gamma()];
        if self.non_centered() {
            let (sd, _) = self.gamma_scales(theta);
            raw.iter().zip(&sd).map(|(z, s)| z * s).collect()
        } else {
            raw.to_vec()
        }
    }

    /// Linear predictor `η = β₀ + Q*β̃ + Eγ`.
    pub fn eta(&self, theta: &[f64]) -> DVector<f64> {
        let lay = &self.layout;
        let bt = DVector::from_column_slice(&theta[lay.beta()]);
        let g = DVector::from_vec(self.gamma_of(theta));
        let mut eta = &self.qr.q_star * bt + &self.e * g;
        eta.add_scalar_mut(theta[0]);
        eta
    }

    /// `ln λ_l(ω)` under the RE-ESF reweighting.
    fn ln_lambda_omega(&self, omega: f64) -> (Vec<f64>, Vec<f64>) {
        let scaled: Vec<f64> = self.ln_lambda.iter().map(|l| omega * l).collect();
        let lse = crate::linalg::log_sum_exp(scaled.iter().copied());
        // d ln λ_l(ω) / dω = ln λ_l − Σ λ^ω ln λ / Σ λ^ω
        let wmean: f64 = scaled
            .iter()
            .zip(&self.ln_lambda)
            .map(|(s, l)| (s - lse).exp() * l)
            .sum();
        let values = scaled.iter().map(|s| self.ln_sum_lambda + s - lse).collect();
        let derivs = self.ln_lambda.iter().map(|l| l - wmean).collect();
        (values, derivs)
    }

    /// Per-component prior variances of γ for ESF / RE-ESF.
    fn gamma_variances(&self, theta: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let rho = theta[lay.log_rho().unwrap()].exp();
        match lay.variant {
            Variant::Esf => self.ln_lambda.iter().map(|l| rho * rho * l.exp()).collect(),
            Variant::ReEsf => {
                let omega = theta[lay.shape().unwrap()].exp();
                let (ln_lw, _) = self.ln_lambda_omega(omega);
                ln_lw.iter().map(|l| rho * rho * l.exp()).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Log density by block, with gradient accumulated into `grad` when
    /// given.
    pub fn terms(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Terms {
        let lay = self.layout;
        debug_assert_eq!(theta.len(), lay.dim());
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let eta = self.eta(theta);
        let log_phi = theta[lay.log_phi()];
        let phi = log_phi.exp();

        // likelihood
        let mut like = 0.0;
        let mut g_eta = DVector::zeros(self.n());
        let mut g_log_phi = 0.0;
        for i in 0..self.n() {
            like += nb2_logpmf_unchecked(self.y[i], self.lgamma_y1[i], eta[i], phi);
            if grad.is_some() {
                let (de, dp) = nb2_grad(self.y[i], eta[i], phi);
                g_eta[i] = de;
                g_log_phi += dp;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            g[0] += g_eta.sum();
            let gb = self.qr.q_star.transpose() * &g_eta;
            for (k, j) in lay.beta().enumerate() {
                g[j] += gb[k];
            }
            let gg = self.e.transpose() * &g_eta;
            if self.non_centered() {
                let (sd, dsd) = self.gamma_scales(theta);
                let z = &theta[lay.gamma()];
                for k in 0..lay.l {
                    let gk = gg[k] * sd[k] * z[k];
                    g[lay.gamma().start + k] += gg[k] * sd[k];
                    g[lay.log_rho().unwrap()] += gk;
                    if lay.variant == Variant::ReEsf {
                        g[lay.shape().unwrap()] += gk * dsd[k];
                    }
                }
            } else {
                for (k, j) in lay.gamma().enumerate() {
                    g[j] += gg[k];
                }
            }
            g[lay.log_phi()] += g_log_phi;
        }

        // fixed effects: β₀ ~ N(0, 1), β ~ N(0, τ²), τ ~ C⁺(0, 1)
        let b0 = theta[0];
        let log_tau = theta[lay.log_tau()];
        let tau = log_tau.exp();
        let bt = DVector::from_column_slice(&theta[lay.beta()]);
        let beta = self.qr.to_beta(&bt);
        let ss = beta.norm_squared();
        let p = lay.p as f64;
        let inv_t2 = (-2.0 * log_tau).exp();
        let mut fixed = -0.5 * b0 * b0 - p * log_tau - 0.5 * ss * inv_t2;
        fixed += -(tau * tau).ln_1p() + log_tau;
        if let Some(g) = grad.as_deref_mut() {
            g[0] -= b0;
            let gb = self.qr.r_star_inv.transpose() * &beta * (-inv_t2);
            for (k, j) in lay.beta().enumerate() {
                g[j] += gb[k];
            }
            g[lay.log_tau()] += -p + ss * inv_t2 + 1.0 - 2.0 * tau * tau / (1.0 + tau * tau);
        }

        // φ ~ C⁺(0, 5)
        let r = phi / PHI_PRIOR_SCALE;
        let mut hyper = -(r * r).ln_1p() + log_phi;
        if let Some(g) = grad.as_deref_mut() {
            g[lay.log_phi()] += 1.0 - 2.0 * r * r / (1.0 + r * r);
        }

        let mut spatial = 0.0;
        let gamma = &theta[lay.gamma()];
        let l = lay.l as f64;
        match lay.variant {
            Variant::NbRidge => {}
            Variant::Bsf => {
                let ir = lay.log_rho().unwrap();
                let log_rho = theta[ir];
                let rho = log_rho.exp();
                let gv = DVector::from_column_slice(gamma);
                let kg = &self.k * &gv;
                let quad = gv.dot(&kg);
                spatial = 0.5 * l * log_rho - 0.5 * rho * quad;
                let b = self.rho_rate();
                hyper += BSF_RHO_SHAPE * log_rho - b * rho;
                if let Some(g) = grad.as_deref_mut() {
                    for (k, j) in lay.gamma().enumerate() {
                        g[j] -= rho * kg[k];
                    }
                    g[ir] += 0.5 * l - 0.5 * rho * quad + BSF_RHO_SHAPE - b * rho;
                }
            }
            Variant::Esf => {
                let ir = lay.log_rho().unwrap();
                let is = lay.shape().unwrap();
                let log_rho = theta[ir];
                let s = theta[is];
                let sig = sigmoid(s);
                let nu = ESF_NU_MAX * sig;
                spatial = standard_normal(gamma, lay.gamma().start, grad.as_deref_mut());
                // ρ⁻² = κ ~ Γ(ν/2, ν/2) with Jacobian |dκ/d ln ρ| = 2κ
                let kappa = (-2.0 * log_rho).exp();
                let h = 0.5 * nu;
                hyper += h * h.ln() - ln_gamma(h) + h * (-2.0 * log_rho) - h * kappa;
                // ν ~ Γ(2, 0.1) on (0, 2], ν = 2σ(s)
                let ln_one_minus = if s >= 0.0 { -s - (-s).exp().ln_1p() } else { -(s.exp().ln_1p()) };
                hyper += (ESF_NU_SHAPE - 1.0) * nu.ln() - ESF_NU_RATE * nu + nu.ln() + ln_one_minus;
                if let Some(g) = grad.as_deref_mut() {
                    g[ir] += -nu + nu * kappa;
                    let d_nu = 0.5 * h.ln() + 0.5 - 0.5 * digamma(h) + 0.5 * (-2.0 * log_rho) - 0.5 * kappa
                        + (ESF_NU_SHAPE - 1.0) / nu
                        - ESF_NU_RATE;
                    let dnu_ds = nu * (1.0 - sig);
                    // d/ds [ln ν + ln(1 − σ)] = (1 − σ) − σ
                    g[is] += d_nu * dnu_ds + (1.0 - sig) - sig;
                }
            }
            Variant::ReEsf => {
                let ir = lay.log_rho().unwrap();
                let is = lay.shape().unwrap();
                let log_rho = theta[ir];
                let rho = log_rho.exp();
                let log_omega = theta[is];
                spatial = standard_normal(gamma, lay.gamma().start, grad.as_deref_mut());
                // ρ ~ C⁺(0, 1)
                hyper += -(rho * rho).ln_1p() + log_rho;
                // ω⁻¹ = κ ~ Γ(2, 5) with Jacobian κ
                let kappa = (-log_omega).exp();
                hyper += RE_ESF_OMEGA_INV_SHAPE * (-log_omega) - RE_ESF_OMEGA_INV_RATE * kappa;
                if let Some(g) = grad.as_deref_mut() {
                    g[ir] += 1.0 - 2.0 * rho * rho / (1.0 + rho * rho);
                    g[is] += -RE_ESF_OMEGA_INV_SHAPE + RE_ESF_OMEGA_INV_RATE * kappa;
                }
            }
        }
        Terms { likelihood: like, fixed_prior: fixed, spatial_prior: spatial, hyper_prior: hyper }
    }

    /// Log density; non-finite values are reported with their block.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_terms(self.terms(theta, None))
    }

    pub fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let t = check_terms(self.terms(theta, Some(grad)))?;
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { block: self.block_of(j).into() });
        }
        Ok(t)
    }

    fn block_of(&self, j: usize) -> &'static str {
        let lay = &self.layout;
        if j == 0 {
            "beta0"
        } else if lay.beta().contains(&j) {
            "beta"
        } else if lay.gamma().contains(&j) {
            "gamma"
        } else if j == lay.log_tau() {
            "tau"
        } else if j == lay.log_phi() {
            "phi"
        } else {
            "hyperparameters"
        }
    }

    /// Pointwise `log p(y_i | θ)`.
    pub fn pointwise_loglik(&self, theta: &[f64], out: &mut [f64]) {
        let eta = self.eta(theta);
        let phi = theta[self.layout.log_phi()].exp();
        for i in 0..self.n() {
            out[i] = nb2_logpmf_unchecked(self.y[i], self.lgamma_y1[i], eta[i], phi);
        }
    }

    pub fn constrain(&self, theta: &[f64]) -> ModelParams {
        let lay = &self.layout;
        let bt = DVector::from_column_slice(&theta[lay.beta()]);
        let beta = self.qr.to_beta(&bt);
        let rho = lay.log_rho().map(|i| theta[i].exp());
        let (nu, omega) = match lay.variant {
            Variant::Esf => (Some(ESF_NU_MAX * sigmoid(theta[lay.shape().unwrap()])), None),
            Variant::ReEsf => (None, Some(theta[lay.shape().unwrap()].exp())),
            _ => (None, None),
        };
        ModelParams {
            beta0: theta[0],
            beta: beta.iter().copied().collect(),
            gamma: self.gamma_of(theta),
            tau: theta[lay.log_tau()].exp(),
            phi: theta[lay.log_phi()].exp(),
            rho,
            nu,
            omega,
        }
    }

    pub fn unconstrain(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let lay = &self.layout;
        if params.beta.len() != lay.p || params.gamma.len() != lay.l {
            return Err(Error::Dimension("parameter sizes do not match the model".into()));
        }
        let mut theta = vec![0.0; lay.dim()];
        theta[0] = params.beta0;
        let bt = self.qr.to_tilde(&DVector::from_column_slice(&params.beta));
        theta[lay.beta()].copy_from_slice(bt.as_slice());
        theta[lay.log_tau()] = params.tau.ln();
        theta[lay.log_phi()] = params.phi.ln();
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::config(name.to_string(), format!("required by {}", lay.variant)))
        };
        if let Some(i) = lay.log_rho() {
            theta[i] = need(params.rho, "rho")?.ln();
        }
        match lay.variant {
            Variant::Esf => {
                let q = need(params.nu, "nu")? / ESF_NU_MAX;
                theta[lay.shape().unwrap()] = (q / (1.0 - q)).ln();
            }
            Variant::ReEsf => theta[lay.shape().unwrap()] = need(params.omega, "omega")?.ln(),
            _ => {}
        }
        if self.non_centered() {
            let (sd, _) = self.gamma_scales(&theta);
            for (k, j) in lay.gamma().enumerate() {
                theta[j] = params.gamma[k] / sd[k];
            }
        } else {
            theta[lay.gamma()].copy_from_slice(&params.gamma);
        }
        Ok(theta)
    }

    /// Flattened constrained values in [`Layout::column_names`] order.
    pub fn draw_row(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.constrain(theta);
        let mut row = Vec::with_capacity(self.layout.dim());
        row.push(p.beta0);
        row.extend(&p.beta);
        row.extend(&p.gamma);
        row.push(p.tau);
        row.push(p.phi);
        row.extend(p.rho);
        row.extend(p.nu);
        row.extend(p.omega);
        row
    }

    /// Log joint density at constrained values (unconstrained-scale
    /// density including Jacobians).
    pub fn log_posterior(&self, params: &ModelParams) -> Result<f64> {
        self.log_density(&self.unconstrain(params)?)
    }

    /// NB likelihood term alone.
    pub fn log_likelihood(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.terms(&self.unconstrain(params)?, None).likelihood)
    }

    /// Prior variances of γ (ESF / RE-ESF); exposed for tests and reports.
    pub fn spatial_variances(&self, theta: &[f64]) -> Vec<f64> {
        self.gamma_variances(theta)
    }

    /// RE-ESF multiplier `λ(ω)`.
    pub fn lambda_omega(&self, omega: f64) -> Vec<f64> {
        self.ln_lambda_omega(omega).0.iter().map(|v| v.exp()).collect()
    }
}

fn standard_normal(z: &[f64], offset: usize, grad: Option<&mut [f64]>) -> f64 {
    if let Some(g) = grad {
        for (k, v) in z.iter().enumerate() {
            g[offset + k] -= v;
        }
    }
    -0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

fn check_terms(t: Terms) -> Result<f64> {
    for (name, v) in [
        ("likelihood", t.likelihood),
        ("fixed effects prior", t.fixed_prior),
        ("spatial prior", t.spatial_prior),
        ("hyperprior", t.hyper_prior),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { block: name.into() });
        }
    }
    Ok(t.total())
}
