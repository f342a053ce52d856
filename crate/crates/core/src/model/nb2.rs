//! Negative binomial in the mean/shape parameterization (NB2):
//! `E[Y] = μ`, `Var[Y] = μ + μ²/φ`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::{Error, Result};

/// `log NB2(y | μ, φ)`.
pub fn nb2_logpmf(y: u64, mu: f64, phi: f64) -> Result<f64> {
    if !(mu > 0.0) || !(phi > 0.0) || !mu.is_finite() || !phi.is_finite() {
        return Err(Error::Domain(format!("NB2 requires mu > 0 and phi > 0, got mu={mu}, phi={phi}")));
    }
    let yf = y as f64;
    Ok(nb2_logpmf_unchecked(yf, ln_gamma(yf + 1.0), mu.ln(), phi))
}

/// Log pmf with `ln Γ(y+1)` precomputed and μ passed as `η = ln μ`.
#[inline]
pub(crate) fn nb2_logpmf_unchecked(y: f64, lgamma_y1: f64, eta: f64, phi: f64) -> f64 {
    let log_mu_phi = log_sum(eta, phi.ln());
    ln_gamma(y + phi) - ln_gamma(phi) - lgamma_y1 + y * eta + phi * phi.ln() - (y + phi) * log_mu_phi
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
fn log_sum(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Derivatives of the log pmf with respect to `η = ln μ` and `ln φ`.
#[inline]
pub(crate) fn nb2_grad(y: f64, eta: f64, phi: f64) -> (f64, f64) {
    let mu = eta.exp();
    let d_eta = phi * (y - mu) / (mu + phi);
    let log_mu_phi = log_sum(eta, phi.ln());
    let d_phi = digamma(y + phi) - digamma(phi) + phi.ln() + 1.0 - log_mu_phi - (y + phi) / (mu + phi);
    (d_eta, d_phi * phi)
}

/// Draws from NB2 as a gamma-Poisson mixture.
pub fn nb2_sample<R: Rng + ?Sized>(rng: &mut R, mu: f64, phi: f64) -> u64 {
    let lambda = Gamma::new(phi, mu / phi).expect("positive shape and scale").sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn closed_form_at_zero() {
        let v = nb2_logpmf(0, 1.0, 1.0).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn normalizes() {
        for (mu, phi) in [(1.0, 1.0), (3.0, 2.0), (10.0, 0.5)] {
            let s: f64 = (0..=2000).map(|y| nb2_logpmf(y, mu, phi).unwrap().exp()).sum();
            assert!((s - 1.0).abs() < 1e-9, "mu={mu} phi={phi}: {s}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(nb2_logpmf(1, 0.0, 1.0).is_err());
        assert!(nb2_logpmf(1, 1.0, -1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for &(y, eta, phi) in &[(0.0, 0.3, 2.0), (7.0, 1.5, 0.7), (40.0, 3.0, 12.0)] {
            let f = |e: f64, lp: f64| nb2_logpmf_unchecked(y, ln_gamma(y + 1.0), e, lp.exp());
            let h = 1e-6;
            let (de, dp) = nb2_grad(y, eta, phi);
            let fe = (f(eta + h, phi.ln()) - f(eta - h, phi.ln())) / (2.0 * h);
            let fp = (f(eta, phi.ln() + h) - f(eta, phi.ln() - h)) / (2.0 * h);
            assert!((de - fe).abs() < 1e-6 * (1.0 + fe.abs()));
            assert!((dp - fp).abs() < 1e-6 * (1.0 + fp.abs()));
        }
    }

    #[test]
    fn sampler_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| nb2_sample(&mut rng, 5.0, 2.0) as f64).collect();
        let m = crate::linalg::mean(&xs);
        let v = crate::linalg::sample_variance(&xs);
        assert!((m - 5.0).abs() / 5.0 < 0.01, "{m}");
        assert!((v - 17.5).abs() / 17.5 < 0.01, "{v}");
    }
}
