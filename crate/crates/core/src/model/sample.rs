use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nuts::{run_chain, ChainStats, LogDensity};
use super::posterior::Posterior;
use super::spec::SamplerSettings;
use crate::diagnostics::split_rhat;
use crate::{Error, Result};

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.log_density_grad(theta, grad)
    }
}

/// Post-warmup draws of all chains, stacked chain by chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    /// S × D constrained draws.
    pub draws: DMatrix<f64>,
    /// S × N pointwise log-likelihood.
    pub loglik: DMatrix<f64>,
    pub chain: Vec<usize>,
    pub seed: u64,
    /// Split R-hat per column of `draws`.
    pub rhat: Vec<f64>,
    pub chain_stats: Vec<ChainStats>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn n_chains(&self) -> usize {
        self.chain_stats.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.draws.column(j).iter().copied().collect())
    }

    pub fn divergent(&self) -> usize {
        self.chain_stats.iter().map(|c| c.divergent).sum()
    }

    /// Largest R-hat and its parameter.
    pub fn max_rhat(&self) -> (String, f64) {
        let mut best = (String::new(), f64::NEG_INFINITY);
        for (n, &r) in self.names.iter().zip(&self.rhat) {
            let r = if r.is_nan() { f64::INFINITY } else { r };
            if r > best.1 {
                best = (n.clone(), r);
            }
        }
        best
    }

    /// Fails if any R-hat exceeds the threshold or too many transitions
    /// diverged.
    pub fn check(&self, settings: &SamplerSettings) -> Result<()> {
        let total = self.n_draws();
        let divergent = self.divergent();
        if divergent as f64 > settings.max_divergent_fraction * total as f64 {
            return Err(Error::Divergent {
                divergent,
                total,
                limit: settings.max_divergent_fraction * 100.0,
            });
        }
        let (parameter, rhat) = self.max_rhat();
        if rhat > settings.rhat_threshold {
            return Err(Error::NotConverged { parameter, rhat, threshold: settings.rhat_threshold });
        }
        Ok(())
    }
}

/// Per-chain generator: the run seed selects the key, the chain the stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

/// Random initial point: uniform(−2, 2) on the unconstrained scale, with the
/// intercept centered on `ln ȳ`.
fn initial_point(post: &Posterior, y_mean: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut last = None;
    for _ in 0..100 {
        let mut theta: Vec<f64> = (0..post.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        theta[0] = (y_mean + 0.5).ln() + rng.random_range(-0.5..0.5);
        match post.log_density(&theta) {
            Ok(_) => return Ok(theta),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(Error::NonFinite { block: "initialization".into() }))
}

/// Runs all chains (in parallel when enabled) without convergence checks.
pub fn sample_unchecked(post: &Posterior, y_mean: f64, settings: &SamplerSettings, names: Vec<String>) -> Result<PosteriorSamples> {
    settings.validate()?;
    let n = post.n();
    let d = names.len();
    let iters = settings.iterations;
    let results = crate::par::map_indexed(settings.chains, |c| -> Result<(Vec<f64>, Vec<f64>, ChainStats)> {
        let mut rng = chain_rng(settings.seed, c);
        let init = initial_point(post, y_mean, &mut rng)?;
        let mut draws = Vec::with_capacity(iters * d);
        let mut ll = Vec::with_capacity(iters * n);
        let mut buf = vec![0.0; n];
        let stats = run_chain(
            post,
            init,
            settings.warmup,
            iters,
            settings.max_depth,
            settings.target_accept,
            &mut rng,
            |q, _| {
                draws.extend(post.draw_row(q));
                post.pointwise_loglik(q, &mut buf);
                ll.extend_from_slice(&buf);
            },
        )?;
        Ok((draws, ll, stats))
    });
    let mut all_draws = Vec::with_capacity(settings.chains * iters * d);
    let mut all_ll = Vec::with_capacity(settings.chains * iters * n);
    let mut chain_stats = Vec::new();
    let mut chain = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        let (dr, ll, st) = r?;
        all_draws.extend(dr);
        all_ll.extend(ll);
        chain_stats.push(st);
        chain.extend(std::iter::repeat_n(c, iters));
    }
    let s = settings.chains * iters;
    let draws = DMatrix::from_row_slice(s, d, &all_draws);
    let loglik = DMatrix::from_row_slice(s, n, &all_ll);
    if let Some(pos) = loglik.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogLik { unit: pos / s });
    }
    let rhat = (0..d)
        .map(|j| {
            let col = draws.column(j);
            let chains: Vec<Vec<f64>> =
                (0..settings.chains).map(|c| col.rows(c * iters, iters).iter().copied().collect()).collect();
            let refs: Vec<&[f64]> = chains.iter().map(|v| v.as_slice()).collect();
            split_rhat(&refs).unwrap_or(f64::NAN)
        })
        .collect();
    Ok(PosteriorSamples { names, draws, loglik, chain, seed: settings.seed, rhat, chain_stats })
}
