//! Power generalized Weibull (PgW) lifetime distribution.
//!
//! Survival `S(t) = exp{1 - [1 + (t/θ)^ν]^(1/γ)}` with scale `θ`, shape `ν` and
//! power-shape `γ`. Everything is evaluated in log space through
//! `L(t) = log1p((t/θ)^ν)`, so that `log S = -expm1(L/γ)` stays finite for the
//! large scale/shape combinations used by the long-horizon presets.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// The three PgW parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgwParams {
    pub theta: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl PgwParams {
    pub fn new(theta: f64, nu: f64, gamma: f64) -> Result<Self> {
        let p = PgwParams { theta, nu, gamma };
        p.validate()?;
        Ok(p)
    }

    /// Exponential distribution with mean `theta`.
    pub fn exponential(theta: f64) -> Result<Self> {
        Self::new(theta, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta", self.theta), ("nu", self.nu), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return arg(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.theta, self.nu, self.gamma]
    }

    pub fn from_array(a: [f64; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }
}

/// A right-censored time-to-event sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TteDataset {
    times: Vec<f64>,
    events: Vec<bool>,
    censor_time: f64,
}

impl TteDataset {
    pub fn new(times: Vec<f64>, events: Vec<bool>, censor_time: f64) -> Result<Self> {
        if times.is_empty() {
            return arg("dataset must contain at least one record");
        }
        if times.len() != events.len() {
            return arg(format!(
                "times/events length mismatch: {} vs {}",
                times.len(),
                events.len()
            ));
        }
        if !(censor_time.is_finite() && censor_time > 0.0) {
            return arg(format!("censor time must be positive, got {censor_time}"));
        }
        if let Some((i, t)) = times
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && **t > 0.0 && **t <= censor_time))
        {
            return arg(format!("record {i}: time {t} outside (0, {censor_time}]"));
        }
        Ok(TteDataset {
            times,
            events,
            censor_time,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn censor_time(&self) -> f64 {
        self.censor_time
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().filter(|d| **d).count()
    }

    pub fn records(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.times.iter().copied().zip(self.events.iter().copied())
    }

    /// Times of the observed events, in record order.
    pub fn event_times(&self) -> Vec<f64> {
        self.records().filter(|r| r.1).map(|r| r.0).collect()
    }

    /// Concatenates two samples; the censoring horizon is the larger of the two.
    pub fn concat(&self, other: &TteDataset) -> TteDataset {
        let mut times = self.times.clone();
        times.extend_from_slice(&other.times);
        let mut events = self.events.clone();
        events.extend_from_slice(&other.events);
        TteDataset {
            times,
            events,
            censor_time: self.censor_time.max(other.censor_time),
        }
    }

    /// Returns `true` when every censored record sits exactly on the horizon.
    pub fn censored_at_horizon(&self) -> bool {
        self.records().all(|(t, d)| d || t == self.censor_time)
    }
}

/// `log1p((t/θ)^ν)` without overflow of the power term.
#[inline]
fn log1p_power(log_ratio_scaled: f64) -> f64 {
    // softplus(z) = log(1 + e^z)
    let z = log_ratio_scaled;
    if z > 35.0 {
        z + (-z).exp()
    } else if z < -37.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn power_term(t: f64, p: &PgwParams) -> f64 {
    let ratio = t / p.theta;
    let x = ratio.powf(p.nu);
    if x.is_finite() {
        x.ln_1p()
    } else {
        log1p_power(p.nu * (t.ln() - p.theta.ln()))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return arg(format!("time must be finite and non-negative, got {t}"));
    }
    Ok(())
}

/// `log S(t)`.
pub fn log_survival(t: f64, p: &PgwParams) -> Result<f64> {
    check_time(t)?;
    p.validate()?;
    let l = power_term(t, p);
    if !l.is_finite() {
        return Err(Error::Domain {
            param: "theta",
            detail: format!("(t/theta)^nu is not representable at t={t}"),
        });
    }
    let log_s = -(l / p.gamma).exp_m1();
    if !log_s.is_finite() {
        return Err(Error::Domain {
            param: "gamma",
            detail: format!("[1 + (t/theta)^nu]^(1/gamma) overflows at t={t}"),
        });
    }
    Ok(log_s)
}

/// Survival function. May underflow to `0.0` far in the tail; use
/// [`log_survival`] when the magnitude matters.
pub fn survival(t: f64, p: &PgwParams) -> Result<f64> {
    log_survival(t, p).map(f64::exp)
}

/// `log h(t)` for `t > 0`.
pub fn log_hazard(t: f64, p: &PgwParams) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return arg(format!("hazard is only defined for t > 0, got {t}"));
    }
    p.validate()?;
    let l = power_term(t, p);
    let log_ratio = t.ln() - p.theta.ln();
    let v = p.nu.ln() - p.gamma.ln() - p.theta.ln() + (p.nu - 1.0) * log_ratio + (1.0 / p.gamma - 1.0) * l;
    if !v.is_finite() {
        return Err(Error::Domain {
            param: if l.is_finite() { "nu" } else { "theta" },
            detail: format!("log hazard not finite at t={t}"),
        });
    }
    Ok(v)
}

pub fn hazard(t: f64, p: &PgwParams) -> Result<f64> {
    let v = log_hazard(t, p)?.exp();
    if !v.is_finite() {
        return Err(Error::Domain {
            param: "nu",
            detail: format!("hazard overflows at t={t}"),
        });
    }
    Ok(v)
}

/// `f(t) = S(t) h(t)`.
pub fn density(t: f64, p: &PgwParams) -> Result<f64> {
    Ok(survival(t, p)? * hazard(t, p)?)
}

/// Inverse of the survival function: the `t` with `S(t) = u`.
pub fn quantile(u: f64, p: &PgwParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return arg(format!("survival probability must lie in (0, 1), got {u}"));
    }
    p.validate()?;
    // (1 - ln u)^γ - 1 = expm1(γ · log1p(-ln u))
    let inner = (p.gamma * (-u.ln()).ln_1p()).exp_m1();
    let t = p.theta * inner.powf(1.0 / p.nu);
    if !t.is_finite() {
        return Err(Error::Domain {
            param: "nu",
            detail: format!("quantile overflows at u={u}"),
        });
    }
    Ok(t)
}

/// `n` i.i.d. draws by inverse-CDF sampling.
pub fn sample_pgw<R: Rng + ?Sized>(n: usize, p: &PgwParams, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return arg("sample size must be at least 1");
    }
    p.validate()?;
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            quantile(u, p)
        })
        .collect()
}

/// Censored log-likelihood `Σ (1-d_i) log S(t_i) + d_i log f(t_i)`.
pub fn log_likelihood(data: &TteDataset, p: &PgwParams) -> Result<f64> {
    p.validate()?;
    let mut total = 0.0;
    for (t, d) in data.records() {
        total += log_survival(t, p)?;
        if d {
            total += log_hazard(t, p)?;
        }
    }
    Ok(total)
}

/// Precomputed sufficient pieces of a dataset for repeated likelihood
/// evaluation inside the sampler.
///
/// Censored records are grouped by time (simulated cohorts censor everyone at
/// the horizon), and the logs of event times are cached.
#[derive(Debug, Clone)]
pub struct LikelihoodCache {
    event_log_times: Vec<f64>,
    sum_event_log_times: f64,
    censored: Vec<(f64, f64)>,
}

impl LikelihoodCache {
    pub fn new(data: &TteDataset) -> Self {
        // sorted so that the cache, and every fit built on it, ignores record order
        let mut event_log_times: Vec<f64> = data.records().filter(|r| r.1).map(|r| r.0.ln()).collect();
        event_log_times.sort_by(f64::total_cmp);
        let sum_event_log_times = event_log_times.iter().sum();
        let mut cens: Vec<f64> = data.records().filter(|r| !r.1).map(|r| r.0).collect();
        cens.sort_by(f64::total_cmp);
        let mut grouped: Vec<(f64, f64)> = Vec::new();
        for t in cens {
            match grouped.last_mut() {
                Some((last, count)) if *last == t => *count += 1.0,
                _ => grouped.push((t, 1.0)),
            }
        }
        let censored = grouped.into_iter().map(|(t, c)| (t.ln(), c)).collect();
        LikelihoodCache {
            event_log_times,
            sum_event_log_times,
            censored,
        }
    }

    pub fn event_count(&self) -> usize {
        self.event_log_times.len()
    }

    /// Log-likelihood; returns `-inf` instead of an error when the
    /// parameters leave the numerically representable region.
    pub fn log_likelihood(&self, p: &PgwParams) -> f64 {
        let log_theta = p.theta.ln();
        let inv_gamma = 1.0 / p.gamma;
        let nu = p.nu;

        let mut sum_l = 0.0;
        let mut sum_log_s = 0.0;
        for &lt in &self.event_log_times {
            let l = log1p_power(nu * (lt - log_theta));
            sum_l += l;
            sum_log_s -= (l * inv_gamma).exp_m1();
        }
        for &(lt, count) in &self.censored {
            let l = log1p_power(nu * (lt - log_theta));
            sum_log_s -= count * (l * inv_gamma).exp_m1();
        }
        let n_ev = self.event_log_times.len() as f64;
        let log_h = n_ev * (nu.ln() - p.gamma.ln() - nu * log_theta)
            + (nu - 1.0) * self.sum_event_log_times
            + (inv_gamma - 1.0) * sum_l;
        let v = sum_log_s + log_h;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardShape {
    Constant,
    Increasing,
    Decreasing,
    Unimodal,
    Bathtub,
}

impl std::fmt::Display for HazardShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HazardShape::Constant => "constant",
            HazardShape::Increasing => "increasing",
            HazardShape::Decreasing => "decreasing",
            HazardShape::Unimodal => "unimodal",
            HazardShape::Bathtub => "bathtub",
        };
        f.write_str(s)
    }
}

const SHAPE_GRID_POINTS: usize = 1000;
const SHAPE_DEAD_BAND: f64 = 1e-9;

/// Classifies the hazard's shape on `(0, horizon]` from the sign pattern of its
/// increments over an equispaced grid.
pub fn classify_hazard_shape(p: &PgwParams, horizon: f64) -> Result<HazardShape> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return arg(format!("horizon must be positive, got {horizon}"));
    }
    p.validate()?;
    if p.nu == 1.0 && p.gamma == 1.0 {
        return Ok(HazardShape::Constant);
    }
    let log_h: Vec<f64> = (1..=SHAPE_GRID_POINTS)
        .map(|k| log_hazard(horizon * k as f64 / SHAPE_GRID_POINTS as f64, p))
        .collect::<Result<_>>()?;

    // increments of log h are relative increments of h
    let mut signs: Vec<i8> = Vec::new();
    for w in log_h.windows(2) {
        let d = w[1] - w[0];
        let s = if d.abs() <= SHAPE_DEAD_BAND {
            0
        } else if d > 0.0 {
            1
        } else {
            -1
        };
        if s != 0 && signs.last() != Some(&s) {
            signs.push(s);
        }
    }
    let shape = match (signs.first(), signs.last()) {
        (None, _) | (_, None) => HazardShape::Constant,
        (Some(1), Some(1)) if signs.len() == 1 => HazardShape::Increasing,
        (Some(-1), Some(-1)) if signs.len() == 1 => HazardShape::Decreasing,
        (Some(1), _) => HazardShape::Unimodal,
        (Some(_), _) => HazardShape::Bathtub,
    };
    Ok(shape)
}
