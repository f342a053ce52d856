//! No-U-Turn sampler with multinomial trajectory sampling, a diagonal
//! metric, dual-averaging step size adaptation and windowed metric
//! adaptation during warmup.

use rand::Rng;
use rand_distr::StandardNormal;

/// Target density on an unconstrained space. `logp_grad` writes the gradient
/// and returns the log density; errors count as divergences.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> crate::Result<f64>;
}

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub step_size: f64,
}

pub struct Nuts<'a, D: LogDensity> {
    target: &'a D,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
    current: State,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a, D: LogDensity> Nuts<'a, D> {
    /// Starts at `init`, which must have a finite log density.
    pub fn new(target: &'a D, init: Vec<f64>, max_depth: usize) -> crate::Result<Self> {
        let n = target.dim();
        let mut g = vec![0.0; n];
        let logp = target.logp_grad(&init, &mut g)?;
        Ok(Nuts {
            target,
            inv_metric: vec![1.0; n],
            step_size: 1.0,
            max_depth,
            current: State { q: init, p: vec![0.0; n], g, logp },
        })
    }

    pub fn position(&self) -> &[f64] {
        &self.current.q
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, s: &State) -> f64 {
        -s.logp + self.kinetic(&s.p)
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.inv_metric
            .iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                z / m.sqrt()
            })
            .collect()
    }

    /// One leapfrog step in place; a failed density evaluation sets
    /// `logp = -inf`.
    fn leapfrog(&self, s: &mut State, eps: f64) {
        for i in 0..s.q.len() {
            s.p[i] += 0.5 * eps * s.g[i];
        }
        for i in 0..s.q.len() {
            s.q[i] += eps * self.inv_metric[i] * s.p[i];
        }
        match self.target.logp_grad(&s.q, &mut s.g) {
            Ok(lp) => {
                s.logp = lp;
                for i in 0..s.q.len() {
                    s.p[i] += 0.5 * eps * s.g[i];
                }
            }
            Err(_) => s.logp = f64::NEG_INFINITY,
        }
    }

    /// Stan's heuristic: double or halve the step until the acceptance
    /// probability of one leapfrog step crosses 0.8.
    pub fn init_step_size<R: Rng>(&mut self, rng: &mut R) {
        let start = self.current.clone();
        let mut s = start.clone();
        s.p = self.sample_momentum(rng);
        let h0 = self.hamiltonian(&s);
        self.leapfrog(&mut s, self.step_size);
        let h = self.hamiltonian(&s);
        let delta = if h.is_finite() { h0 - h } else { f64::NEG_INFINITY };
        let direction = if delta > 0.8f64.ln() { 1 } else { -1 };
        for _ in 0..100 {
            let mut s = start.clone();
            s.p = self.sample_momentum(rng);
            let h0 = self.hamiltonian(&s);
            self.leapfrog(&mut s, self.step_size);
            let h = self.hamiltonian(&s);
            let delta = if h.is_finite() { h0 - h } else { f64::NEG_INFINITY };
            if (direction == 1 && !(delta > 0.8f64.ln())) || (direction == -1 && !(delta < 0.8f64.ln())) {
                break;
            }
            self.step_size = if direction == 1 { self.step_size * 2.0 } else { self.step_size * 0.5 };
            if self.step_size > 1e7 || self.step_size < 1e-12 {
                break;
            }
        }
    }

    pub fn transition<R: Rng>(&mut self, rng: &mut R) -> Transition {
        let mut z = self.current.clone();
        z.p = self.sample_momentum(rng);
        let h0 = self.hamiltonian(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p0 = z.p.clone();
        let ps0 = self.p_sharp(&p0);
        let mut p_fwd_fwd = p0.clone();
        let mut p_sharp_fwd_fwd = ps0.clone();
        let mut p_fwd_bck = p0.clone();
        let mut p_sharp_fwd_bck = ps0.clone();
        let mut p_bck_fwd = p0.clone();
        let mut p_sharp_bck_fwd = ps0.clone();
        let mut p_bck_bck = p0.clone();
        let mut p_sharp_bck_bck = ps0;
        let mut rho = p0;

        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        let mut n_leapfrog = 0;
        let mut sum_metro = 0.0;
        let mut divergent = false;
        let n = rho.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; n];
            let mut rho_bck = vec![0.0; n];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid;
            if rng.random::<f64>() > 0.5 {
                z = z_fwd.clone();
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.copy_from_slice(&p_fwd_bck);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_bck);
                valid = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    &mut divergent,
                    rng,
                );
                z_fwd = z.clone();
            } else {
                z = z_bck.clone();
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_fwd);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_fwd);
                valid = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    &mut divergent,
                    rng,
                );
                z_bck = z.clone();
            }
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else if rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample = z_propose.clone();
            }
            log_sum_weight = log_add(log_sum_weight, lsw_subtree);

            for i in 0..n {
                rho[i] = rho_bck[i] + rho_fwd[i];
            }
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let ext: Vec<f64> = (0..n).map(|i| rho_bck[i] + p_fwd_bck[i]).collect();
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &ext);
            let ext: Vec<f64> = (0..n).map(|i| rho_fwd[i] + p_bck_fwd[i]).collect();
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &ext);
            if !persist {
                break;
            }
        }
        self.current = z_sample;
        Transition {
            accept_stat: if n_leapfrog > 0 { sum_metro / n_leapfrog as f64 } else { 0.0 },
            depth,
            n_leapfrog,
            divergent,
            step_size: self.step_size,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng>(
        &self,
        depth: usize,
        z: &mut State,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut Vec<f64>,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro: &mut f64,
        divergent: &mut bool,
        rng: &mut R,
    ) -> bool {
        let n = rho.len();
        if depth == 0 {
            self.leapfrog(z, sign * self.step_size);
            *n_leapfrog += 1;
            let mut h = self.hamiltonian(z);
            if !h.is_finite() {
                h = f64::INFINITY;
            }
            if h - h0 > MAX_DELTA_H {
                *divergent = true;
            }
            *log_sum_weight = log_add(*log_sum_weight, h0 - h);
            *sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            *z_propose = z.clone();
            let ps = self.p_sharp(&z.p);
            p_sharp_beg.copy_from_slice(&ps);
            p_sharp_end.copy_from_slice(&ps);
            for i in 0..n {
                rho[i] += z.p[i];
            }
            p_beg.copy_from_slice(&z.p);
            p_end.copy_from_slice(&z.p);
            return !*divergent;
        }

        let mut p_sharp_init_end = vec![0.0; n];
        let mut p_init_end = vec![0.0; n];
        let mut rho_init = vec![0.0; n];
        let mut lsw_init = f64::NEG_INFINITY;
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_init,
            sum_metro,
            divergent,
            rng,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut rho_final = vec![0.0; n];
        let mut p_final_beg = vec![0.0; n];
        let mut p_sharp_final_beg = vec![0.0; n];
        let mut lsw_final = f64::NEG_INFINITY;
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_final,
            sum_metro,
            divergent,
            rng,
        );
        if !valid_final {
            return false;
        }

        let lsw_subtree = log_add(lsw_init, lsw_final);
        *log_sum_weight = log_add(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree: Vec<f64> = (0..n).map(|i| rho_init[i] + rho_final[i]).collect();
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let ext: Vec<f64> = (0..n).map(|i| rho_init[i] + p_final_beg[i]).collect();
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &ext);
        let ext: Vec<f64> = (0..n).map(|i| rho_final[i] + p_init_end[i]).collect();
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &ext);
        for i in 0..n {
            rho[i] += rho_subtree[i];
        }
        persist
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Nesterov dual averaging of the log step size.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
    gamma: f64,
    kappa: f64,
    t0: f64,
}

impl DualAveraging {
    pub fn new(step_size: f64, delta: f64) -> Self {
        DualAveraging {
            mu: (10.0 * step_size).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            delta,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
        }
    }

    pub fn restart(&mut self, step_size: f64) {
        *self = DualAveraging::new(step_size, self.delta);
    }

    /// Returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for the diagonal metric.
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance, shrunk toward 1e-3 as in Stan.
    fn variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup schedule: initial fast interval, doubling slow windows for the
/// metric, and a final fast interval.
#[derive(Debug, Clone)]
pub struct WindowedAdaptation {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    counter: usize,
    welford: Welford,
}

impl WindowedAdaptation {
    pub fn new(num_warmup: usize, dim: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if num_warmup < 20 {
            init_buffer = num_warmup;
            term_buffer = 0;
            base_window = 0;
        } else if init_buffer + base_window + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base_window = num_warmup - (init_buffer + term_buffer);
        }
        WindowedAdaptation {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window_end: init_buffer + base_window,
            counter: 0,
            welford: Welford::new(dim),
        }
    }

    fn in_slow_window(&self) -> bool {
        self.window_size > 0
            && self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
    }

    /// Records a warmup draw. Returns a new inverse metric at the end of a
    /// slow window.
    pub fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        let mut out = None;
        if self.in_slow_window() {
            self.welford.add(q);
            if self.counter + 1 == self.next_window_end {
                out = Some(self.welford.variance());
                self.welford = Welford::new(q.len());
                self.window_size *= 2;
                self.next_window_end = self.counter + 1 + self.window_size;
                let last = self.num_warmup - self.term_buffer;
                if self.next_window_end + 2 * self.window_size >= last {
                    self.window_size = last - (self.counter + 1);
                    self.next_window_end = last;
                }
            }
        }
        self.counter += 1;
        out
    }
}

/// Runs warmup and sampling, calling `keep` on every post-warmup position.
pub fn run_chain<D: LogDensity, R: Rng>(
    target: &D,
    init: Vec<f64>,
    warmup: usize,
    iterations: usize,
    max_depth: usize,
    target_accept: f64,
    rng: &mut R,
    mut keep: impl FnMut(&[f64], &Transition),
) -> crate::Result<ChainStats> {
    let mut nuts = Nuts::new(target, init, max_depth)?;
    nuts.init_step_size(rng);
    let mut da = DualAveraging::new(nuts.step_size, target_accept);
    let mut windows = WindowedAdaptation::new(warmup, target.dim());
    let mut stats = ChainStats::default();
    for _ in 0..warmup {
        let t = nuts.transition(rng);
        nuts.step_size = da.update(t.accept_stat);
        if let Some(var) = windows.learn(nuts.position()) {
            nuts.inv_metric = var;
            nuts.init_step_size(rng);
            da.restart(nuts.step_size);
        }
        if t.divergent {
            stats.warmup_divergent += 1;
        }
    }
    if warmup > 0 {
        nuts.step_size = da.final_step_size();
    }
    stats.step_size = nuts.step_size;
    stats.inv_metric = nuts.inv_metric.clone();
    for _ in 0..iterations {
        let t = nuts.transition(rng);
        if t.divergent {
            stats.divergent += 1;
        }
        stats.total_leapfrog += t.n_leapfrog;
        stats.max_depth_hits += (t.depth >= max_depth) as usize;
        stats.mean_accept += t.accept_stat / iterations as f64;
        keep(nuts.position(), &t);
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub divergent: usize,
    pub warmup_divergent: usize,
    pub total_leapfrog: usize,
    pub max_depth_hits: usize,
    pub mean_accept: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    struct Gaussian {
        sd: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.sd.len()
        }
        fn logp_grad(&self, x: &[f64], g: &mut [f64]) -> crate::Result<f64> {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let s2 = self.sd[i] * self.sd[i];
                lp -= 0.5 * x[i] * x[i] / s2;
                g[i] = -x[i] / s2;
            }
            Ok(lp)
        }
    }

    #[test]
    fn recovers_gaussian_moments() {
        let target = Gaussian { sd: vec![1.0, 10.0, 0.1, 3.0] };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut draws: Vec<Vec<f64>> = Vec::new();
        let stats = run_chain(&target, vec![1.0; 4], 1000, 4000, 10, 0.8, &mut rng, |q, _| {
            draws.push(q.to_vec())
        })
        .unwrap();
        assert_eq!(stats.divergent, 0);
        for i in 0..4 {
            let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let m = crate::linalg::mean(&col);
            let sd = crate::linalg::sample_variance(&col).sqrt();
            let s = target.sd[i];
            assert!(m.abs() < 0.15 * s, "dim {i}: mean {m}");
            assert!((sd / s - 1.0).abs() < 0.1, "dim {i}: sd {sd}");
        }
        // metric adapts toward the target variances
        assert!(stats.inv_metric[1] > 20.0 && stats.inv_metric[2] < 0.1);
    }

    #[test]
    fn deterministic_given_seed() {
        let target = Gaussian { sd: vec![1.0, 2.0] };
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
            let mut out = Vec::new();
            run_chain(&target, vec![0.5, 0.5], 200, 100, 10, 0.8, &mut rng, |q, _| out.push(q.to_vec())).unwrap();
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dual_averaging_converges_to_target() {
        let mut da = DualAveraging::new(1.0, 0.8);
        // acceptance falls with the step size
        let mut eps: f64 = 1.0;
        for _ in 0..2000 {
            let acc = (-eps).exp();
            eps = da.update(acc);
        }
        let final_eps = da.final_step_size();
        assert!(((-final_eps).exp() - 0.8).abs() < 0.02);
    }

    #[test]
    fn windows_cover_warmup() {
        let mut w = WindowedAdaptation::new(1000, 1);
        let ends: Vec<usize> = (0..1000).filter_map(|i| w.learn(&[i as f64]).map(|_| i + 1)).collect();
        assert_eq!(ends, vec![100, 150, 250, 450, 950]);
    }
}
