//! Posterior sampling for the PgW model.
//!
//! Adaptive random-walk Metropolis on the logs of the free parameters. During
//! burn-in the proposal covariance is learned over doubling windows and a
//! global scale is tuned by Robbins–Monro toward `target_accept`; both are
//! frozen for the retained draws.

mod diagnostics;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub use diagnostics::{effective_sample_size, is_constant, split_rhat};

use crate::error::{arg, Error, Result};
use crate::pgw::{log_likelihood, LikelihoodCache, PgwParams, TteDataset};
use crate::prior::{
    gamma_meta_from_moments, lognormal_meta_from_moments, prior_log_density, Param, ParamFamily, PriorSpec,
};
use crate::seed::derive_seed;

const INIT_RETRIES: usize = 100;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    pub chains: usize,
    pub iters_per_chain: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub init_jitter_sd: f64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            chains: 4,
            iters_per_chain: 10_000,
            burn_in: 1_000,
            seed: 0,
            target_accept: 0.234,
            init_jitter_sd: 0.1,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return arg(format!("at least 2 chains required, got {}", self.chains));
        }
        if self.iters_per_chain < 100 {
            return arg(format!(
                "iters_per_chain must be at least 100, got {}",
                self.iters_per_chain
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return arg(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if !(self.init_jitter_sd.is_finite() && self.init_jitter_sd > 0.0) {
            return arg("init_jitter_sd must be positive");
        }
        Ok(())
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.iters_per_chain
    }
}

/// Pooled post-burn-in draws of the free parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub params: Vec<Param>,
    pub chains: usize,
    pub iters_per_chain: usize,
    /// One column per free parameter; chain `c` occupies rows
    /// `c * iters_per_chain .. (c + 1) * iters_per_chain`.
    pub columns: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    /// Columns with no variation (ESS/R̂ conventions applied).
    pub degenerate: Vec<bool>,
    pub accept_rate: Vec<f64>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl PosteriorDraws {
    pub fn rows(&self) -> usize {
        self.chains * self.iters_per_chain
    }

    pub fn column(&self, which: Param) -> Option<&[f64]> {
        self.params
            .iter()
            .position(|p| *p == which)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn chain_slices(&self, which: Param) -> Option<Vec<&[f64]>> {
        self.column(which).map(|c| c.chunks(self.iters_per_chain).collect())
    }

    pub fn ess_of(&self, which: Param) -> Option<f64> {
        self.params.iter().position(|p| *p == which).map(|i| self.ess[i])
    }

    pub fn rhat_of(&self, which: Param) -> Option<f64> {
        self.params.iter().position(|p| *p == which).map(|i| self.rhat[i])
    }

    pub fn mean(&self, which: Param) -> Option<f64> {
        self.column(which).map(|c| c.iter().sum::<f64>() / c.len() as f64)
    }

    pub fn sd(&self, which: Param) -> Option<f64> {
        let c = self.column(which)?;
        let m = self.mean(which)?;
        let n = c.len() as f64;
        Some((c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    /// Builds draws from externally produced chains and computes diagnostics.
    pub fn from_chains(params: Vec<Param>, chains: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        let n_chains = chains.len();
        let iters = chains.first().map_or(0, |c| c.len());
        if chains.iter().any(|c| c.len() != iters) {
            return arg("chains must have equal length");
        }
        let columns: Vec<Vec<f64>> = params
            .iter()
            .map(|p| chains.iter().flat_map(|c| c.iter().map(|row| row[p.index()])).collect())
            .collect();
        let mut ess = Vec::with_capacity(params.len());
        let mut rhat = Vec::with_capacity(params.len());
        let mut degenerate = Vec::with_capacity(params.len());
        for col in &columns {
            let slices: Vec<&[f64]> = col.chunks(iters.max(1)).collect();
            ess.push(effective_sample_size(&slices)?);
            rhat.push(split_rhat(&slices)?);
            degenerate.push(is_constant(&slices));
        }
        Ok(PosteriorDraws {
            params,
            chains: n_chains,
            iters_per_chain: iters,
            columns,
            ess,
            rhat,
            degenerate,
            accept_rate: vec![f64::NAN; n_chains],
            wall_time: 0.0,
        })
    }
}

/// Unnormalized log posterior, `-inf` outside the support or where a factor
/// cannot be evaluated.
pub fn log_posterior(data: &TteDataset, spec: &PriorSpec, p: &PgwParams) -> f64 {
    if p.validate().is_err() {
        return f64::NEG_INFINITY;
    }
    let prior = match prior_log_density(spec, p) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    if prior == f64::NEG_INFINITY {
        return prior;
    }
    match log_likelihood(data, p) {
        Ok(ll) if !ll.is_nan() => prior + ll,
        _ => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, Copy)]
enum PriorTerm {
    Lognormal { mu: f64, sigma: f64, norm: f64 },
    Gamma { shape: f64, rate: f64, norm: f64 },
}

impl PriorTerm {
    #[inline]
    fn log_density_at_log(&self, log_x: f64) -> f64 {
        match *self {
            PriorTerm::Lognormal { mu, sigma, norm } => {
                let z = (log_x - mu) / sigma;
                norm - log_x - 0.5 * z * z
            }
            PriorTerm::Gamma { shape, rate, norm } => norm + (shape - 1.0) * log_x - rate * log_x.exp(),
        }
    }
}

/// Log posterior of the free log-parameters, prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct LogTarget {
    /// `None` gives a flat likelihood, so the target is the prior alone.
    cache: Option<LikelihoodCache>,
    free: Vec<Param>,
    terms: Vec<PriorTerm>,
    base: [f64; 3],
}

impl LogTarget {
    pub fn new(data: &TteDataset, spec: &PriorSpec) -> Result<Self> {
        Self::build(Some(LikelihoodCache::new(data)), spec)
    }

    /// Target with a flat likelihood.
    pub fn prior_only(spec: &PriorSpec) -> Result<Self> {
        Self::build(None, spec)
    }

    fn build(cache: Option<LikelihoodCache>, spec: &PriorSpec) -> Result<Self> {
        spec.validate_values()?;
        let free = spec.free_params();
        let mut terms = Vec::with_capacity(free.len());
        for w in &free {
            let prior = spec.get(*w);
            let term = match prior.family {
                ParamFamily::Lognormal => {
                    let m = lognormal_meta_from_moments(prior.mean, prior.sd, spec.paper_literal_lognormal)?;
                    PriorTerm::Lognormal {
                        mu: m.mu,
                        sigma: m.sigma,
                        norm: -m.sigma.ln() - LN_SQRT_2PI,
                    }
                }
                ParamFamily::Gamma => {
                    let m = gamma_meta_from_moments(prior.mean, prior.sd)?;
                    PriorTerm::Gamma {
                        shape: m.shape,
                        rate: m.rate,
                        norm: m.shape * m.rate.ln() - ln_gamma(m.shape),
                    }
                }
                ParamFamily::Fixed => unreachable!("free_params excludes fixed entries"),
            };
            terms.push(term);
        }
        Ok(LogTarget {
            cache,
            free,
            terms,
            base: spec.means(),
        })
    }

    pub fn free_params(&self) -> &[Param] {
        &self.free
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn params_at(&self, log_free: &[f64]) -> [f64; 3] {
        let mut full = self.base;
        for (w, z) in self.free.iter().zip(log_free) {
            full[w.index()] = z.exp();
        }
        full
    }

    /// Log posterior in the parameters themselves (no Jacobian).
    pub fn log_posterior(&self, p: &PgwParams) -> f64 {
        if p.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        let values = p.as_array();
        let mut lp = 0.0;
        for (w, term) in self.free.iter().zip(&self.terms) {
            lp += term.log_density_at_log(values[w.index()].ln());
        }
        match &self.cache {
            Some(cache) => lp + cache.log_likelihood(p),
            None => lp,
        }
    }

    /// Log density of the free log-parameters: posterior plus the log-Jacobian
    /// `Σ log x`.
    pub fn log_density(&self, log_free: &[f64]) -> f64 {
        let full = self.params_at(log_free);
        let p = PgwParams {
            theta: full[0],
            nu: full[1],
            gamma: full[2],
        };
        if p.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        let jac: f64 = log_free.iter().sum();
        let v = self.log_posterior(&p) + jac;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Proposal state learned during burn-in.
struct Proposal {
    dim: usize,
    /// Lower-triangular Cholesky factor, row-major `dim × dim`.
    chol: Vec<f64>,
    log_scale: f64,
}

impl Proposal {
    fn new(dim: usize, step: f64) -> Self {
        let mut chol = vec![0.0; dim * dim];
        for i in 0..dim {
            chol[i * dim + i] = step;
        }
        Proposal {
            dim,
            chol,
            log_scale: 0.0,
        }
    }

    fn propose<R: Rng>(&self, z: &[f64], out: &mut [f64], rng: &mut R) {
        let d = self.dim;
        let mut eps = [0.0f64; 3];
        for e in eps.iter_mut().take(d) {
            *e = rng.sample(StandardNormal);
        }
        let s = self.log_scale.exp();
        for i in 0..d {
            let mut step = 0.0;
            for (j, e) in eps.iter().enumerate().take(i + 1) {
                step += self.chol[i * d + j] * e;
            }
            out[i] = z[i] + s * step;
        }
    }

    /// Replaces the covariance with a regularized estimate from `window`.
    fn set_covariance(&mut self, window: &[[f64; 3]]) {
        let d = self.dim;
        let n = window.len() as f64;
        if window.len() < 2 * d + 2 {
            return;
        }
        let mut mean = [0.0; 3];
        for row in window {
            for i in 0..d {
                mean[i] += row[i] / n;
            }
        }
        let mut cov = vec![0.0; d * d];
        for row in window {
            for i in 0..d {
                for j in 0..=i {
                    cov[i * d + j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        // shrink toward a small diagonal
        let w = n / (n + 5.0);
        for i in 0..d {
            for j in 0..=i {
                cov[i * d + j] *= w;
            }
            cov[i * d + i] += 1e-3 * (1.0 - w);
        }
        // proposal covariance (2.38² / d) Σ
        let base = 2.38 * 2.38 / d as f64;
        if let Some(l) = cholesky(&cov, d) {
            self.chol = l.into_iter().map(|x| x * base.sqrt()).collect();
            self.log_scale = 0.0;
        }
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !s.is_finite() || s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Iteration indices at which the proposal covariance is re-estimated,
/// each paired with the start of its estimation window.
fn adaptation_windows(burn_in: usize) -> Vec<(usize, usize)> {
    let init = (burn_in * 15) / 100;
    let term = burn_in / 10;
    let end = burn_in.saturating_sub(term);
    let mut windows = Vec::new();
    if end <= init + 20 {
        return windows;
    }
    let mut start = init;
    let mut size = 25usize.max((end - init) / 31);
    while start < end {
        let mut stop = start + size;
        // absorb a too-short remainder into the last window
        if stop + 2 * size > end {
            stop = end;
        }
        windows.push((start, stop));
        start = stop;
        size *= 2;
    }
    windows
}

/// Output of a single chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub draws: Vec<PgwParams>,
    pub accept_rate: f64,
}

/// Runs one chain; deterministic given `(settings.seed, chain_index)`.
pub fn run_chain(data: &TteDataset, spec: &PriorSpec, settings: &McmcSettings, chain_index: usize) -> Result<ChainRun> {
    let target = LogTarget::new(data, spec)?;
    run_chain_on(&target, settings, chain_index)
}

fn to_params(a: [f64; 3]) -> PgwParams {
    PgwParams {
        theta: a[0],
        nu: a[1],
        gamma: a[2],
    }
}

pub fn run_chain_on(target: &LogTarget, settings: &McmcSettings, chain_index: usize) -> Result<ChainRun> {
    if settings.iters_per_chain == 0 {
        return arg("iters_per_chain must be positive");
    }
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, &[chain_index as u64]));

    if d == 0 {
        let p = to_params(target.params_at(&[]));
        return Ok(ChainRun {
            draws: vec![p; settings.iters_per_chain],
            accept_rate: 1.0,
        });
    }

    let centre: Vec<f64> = target
        .free_params()
        .iter()
        .map(|w| target.base[w.index()].ln())
        .collect();
    let mut z = vec![0.0; d];
    let mut lp = f64::NEG_INFINITY;
    for _ in 0..INIT_RETRIES {
        for i in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            z[i] = centre[i] + settings.init_jitter_sd * e;
        }
        lp = target.log_density(&z);
        if lp.is_finite() {
            break;
        }
    }
    if !lp.is_finite() {
        return Err(Error::Initialization {
            chain: chain_index,
            detail: format!(
                "log posterior not finite at {INIT_RETRIES} jittered starting points around the prior means"
            ),
        });
    }

    let mut proposal = Proposal::new(d, 0.1);
    let windows = adaptation_windows(settings.burn_in);
    let mut next_window = 0;
    let mut history: Vec<[f64; 3]> = Vec::with_capacity(settings.burn_in);
    let mut rm_step = 0usize;
    let mut cand = vec![0.0; d];
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(settings.iters_per_chain);

    let total = settings.burn_in + settings.iters_per_chain;
    for it in 0..total {
        proposal.propose(&z, &mut cand, &mut rng);
        let lp_cand = target.log_density(&cand);
        let log_ratio = lp_cand - lp;
        let accept_prob = if log_ratio.is_nan() {
            0.0
        } else {
            log_ratio.min(0.0).exp()
        };
        let u: f64 = rng.random();
        if u < accept_prob {
            z.copy_from_slice(&cand);
            lp = lp_cand;
            if it >= settings.burn_in {
                accepted += 1;
            }
        }

        if it < settings.burn_in {
            rm_step += 1;
            let eta = (rm_step as f64).powf(-0.6);
            proposal.log_scale += eta * (accept_prob - settings.target_accept);
            let mut row = [0.0; 3];
            row[..d].copy_from_slice(&z);
            history.push(row);
            if let Some(&(start, stop)) = windows.get(next_window) {
                if it + 1 == stop {
                    proposal.set_covariance(&history[start..stop]);
                    rm_step = 0;
                    next_window += 1;
                }
            }
        } else {
            draws.push(to_params(target.params_at(&z)));
        }
    }

    Ok(ChainRun {
        draws,
        accept_rate: accepted as f64 / settings.iters_per_chain as f64,
    })
}

/// Runs every chain, discards burn-in and pools the draws.
pub fn run_chains(data: &TteDataset, spec: &PriorSpec, settings: &McmcSettings) -> Result<PosteriorDraws> {
    settings.validate()?;
    run_chains_on(&LogTarget::new(data, spec)?, settings)
}

pub fn run_chains_on(target: &LogTarget, settings: &McmcSettings) -> Result<PosteriorDraws> {
    settings.validate()?;
    let start = Instant::now();
    let runs: Vec<ChainRun> = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_chain_on(target, settings, c))
        .collect::<Result<_>>()?;
    let free = target.free_params().to_vec();
    let chains: Vec<Vec<[f64; 3]>> = runs
        .iter()
        .map(|r| r.draws.iter().map(|p| p.as_array()).collect())
        .collect();
    let mut out = PosteriorDraws::from_chains(free, chains)?;
    out.accept_rate = runs.iter().map(|r| r.accept_rate).collect();
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}
