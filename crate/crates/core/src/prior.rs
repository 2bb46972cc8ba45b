//! Priors on `(θ, ν, γ)`: per-parameter families, moment-matched
//! hyperparameters and the shipped prior-belief presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{arg, Error, Result};
use crate::pgw::PgwParams;

/// Prior standard deviation used for every free parameter unless overridden.
pub const DEFAULT_PRIOR_SD: f64 = 10.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Theta,
    Nu,
    Gamma,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Theta, Param::Nu, Param::Gamma];

    pub fn index(self) -> usize {
        match self {
            Param::Theta => 0,
            Param::Nu => 1,
            Param::Gamma => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Theta => "theta",
            Param::Nu => "nu",
            Param::Gamma => "gamma",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamFamily {
    Lognormal,
    Gamma,
    Fixed,
}

/// Lognormal `(mu, sigma)` on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalMeta {
    pub mu: f64,
    pub sigma: f64,
}

/// Gamma `(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaMeta {
    pub shape: f64,
    pub rate: f64,
}

fn check_moments(mean: f64, sd: f64) -> Result<()> {
    if !(mean.is_finite() && mean > 0.0) {
        return arg(format!("prior mean must be positive, got {mean}"));
    }
    if !(sd.is_finite() && sd > 0.0) {
        return arg(format!("prior sd must be positive, got {sd}"));
    }
    Ok(())
}

/// Lognormal hyperparameters with the requested mean and sd.
///
/// With `paper_literal` the location drops the factor one half:
/// `mu = log(mean) - log(sd²/mean² + 1)`; the resulting prior then has a
/// smaller mean than requested.
pub fn lognormal_meta_from_moments(mean: f64, sd: f64, paper_literal: bool) -> Result<LognormalMeta> {
    check_moments(mean, sd)?;
    let cv2 = (sd / mean).powi(2);
    let log_term = cv2.ln_1p();
    let sigma = log_term.sqrt();
    let mu = if paper_literal {
        mean.ln() - log_term
    } else {
        mean.ln() - 0.5 * log_term
    };
    Ok(LognormalMeta { mu, sigma })
}

pub fn gamma_meta_from_moments(mean: f64, sd: f64) -> Result<GammaMeta> {
    check_moments(mean, sd)?;
    let var = sd * sd;
    Ok(GammaMeta {
        shape: mean * mean / var,
        rate: mean / var,
    })
}

pub(crate) fn standard_normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// Quantile of Gamma(shape, rate), found by bisection on `log x`.
pub(crate) fn gamma_quantile(meta: GammaMeta, prob: f64) -> f64 {
    let a = meta.shape;
    let ln_gamma_a1 = ln_gamma(a + 1.0);
    // For x → 0, P(a, x) ≈ x^a / Γ(a+1).
    let mut lo = -700.0f64;
    if gamma_lr(a, lo.exp()) >= prob {
        let y = (prob.ln() + ln_gamma_a1) / a;
        return y.exp() / meta.rate;
    }
    let mut hi = (a.max(1.0)).ln() + 1.0;
    while gamma_lr(a, hi.exp()) < prob {
        hi += 1.0 + hi.abs();
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gamma_lr(a, mid.exp()) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp() / meta.rate
}

/// Univariate prior on one PgW parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPrior {
    pub family: ParamFamily,
    pub mean: f64,
    pub sd: f64,
}

impl ParamPrior {
    pub fn lognormal(mean: f64, sd: f64) -> Self {
        ParamPrior {
            family: ParamFamily::Lognormal,
            mean,
            sd,
        }
    }

    pub fn gamma(mean: f64, sd: f64) -> Self {
        ParamPrior {
            family: ParamFamily::Gamma,
            mean,
            sd,
        }
    }

    pub fn fixed(mean: f64) -> Self {
        ParamPrior {
            family: ParamFamily::Fixed,
            mean,
            sd: DEFAULT_PRIOR_SD,
        }
    }

    pub fn is_fixed(&self) -> bool {
        self.family == ParamFamily::Fixed
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_fixed() {
            if !(self.mean.is_finite() && self.mean > 0.0) {
                return arg(format!("fixed value must be positive, got {}", self.mean));
            }
            Ok(())
        } else {
            check_moments(self.mean, self.sd)
        }
    }

    /// Log density at `x > 0`; `0` for a fixed parameter.
    pub fn log_density(&self, x: f64, paper_literal: bool) -> Result<f64> {
        if !(x.is_finite() && x > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        match self.family {
            ParamFamily::Fixed => Ok(0.0),
            ParamFamily::Lognormal => {
                let m = lognormal_meta_from_moments(self.mean, self.sd, paper_literal)?;
                let lx = x.ln();
                let z = (lx - m.mu) / m.sigma;
                Ok(-lx - m.sigma.ln() - LN_SQRT_2PI - 0.5 * z * z)
            }
            ParamFamily::Gamma => {
                let m = gamma_meta_from_moments(self.mean, self.sd)?;
                Ok(m.shape * m.rate.ln() - ln_gamma(m.shape) + (m.shape - 1.0) * x.ln() - m.rate * x)
            }
        }
    }

    pub fn quantile(&self, prob: f64, paper_literal: bool) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return arg(format!("probability must lie in (0, 1), got {prob}"));
        }
        match self.family {
            ParamFamily::Fixed => arg("quantile of a fixed parameter is undefined"),
            ParamFamily::Lognormal => {
                let m = lognormal_meta_from_moments(self.mean, self.sd, paper_literal)?;
                Ok((m.mu + standard_normal_quantile(prob) * m.sigma).exp())
            }
            ParamFamily::Gamma => {
                let m = gamma_meta_from_moments(self.mean, self.sd)?;
                Ok(gamma_quantile(m, prob))
            }
        }
    }
}

/// The four family combinations for `(θ, ν, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorFamily {
    #[serde(rename = "fix-log-log")]
    FixLogLog,
    #[serde(rename = "log-log-log")]
    LogLogLog,
    #[serde(rename = "fix-gam-gam")]
    FixGamGam,
    #[serde(rename = "gam-gam-gam")]
    GamGamGam,
}

impl PriorFamily {
    pub const ALL: [PriorFamily; 4] = [
        PriorFamily::FixGamGam,
        PriorFamily::GamGamGam,
        PriorFamily::FixLogLog,
        PriorFamily::LogLogLog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PriorFamily::FixLogLog => "fix-log-log",
            PriorFamily::LogLogLog => "log-log-log",
            PriorFamily::FixGamGam => "fix-gam-gam",
            PriorFamily::GamGamGam => "gam-gam-gam",
        }
    }

    pub fn shape_family(self) -> ParamFamily {
        match self {
            PriorFamily::FixLogLog | PriorFamily::LogLogLog => ParamFamily::Lognormal,
            PriorFamily::FixGamGam | PriorFamily::GamGamGam => ParamFamily::Gamma,
        }
    }

    pub fn fixes_scale(self) -> bool {
        matches!(self, PriorFamily::FixLogLog | PriorFamily::FixGamGam)
    }
}

impl fmt::Display for PriorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PriorFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown prior family `{s}`")))
    }
}

/// Independent priors on `θ`, `ν` and `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub theta: ParamPrior,
    pub nu: ParamPrior,
    pub gamma: ParamPrior,
    #[serde(default)]
    pub paper_literal_lognormal: bool,
}

impl PriorSpec {
    pub fn new(theta: ParamPrior, nu: ParamPrior, gamma: ParamPrior) -> Result<Self> {
        let spec = PriorSpec {
            theta,
            nu,
            gamma,
            paper_literal_lognormal: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec for one of the four family combinations.
    pub fn from_family(family: PriorFamily, means: [f64; 3], sd: f64) -> Result<Self> {
        let shape = |m| ParamPrior {
            family: family.shape_family(),
            mean: m,
            sd,
        };
        let theta = if family.fixes_scale() {
            ParamPrior {
                family: ParamFamily::Fixed,
                mean: means[0],
                sd,
            }
        } else {
            shape(means[0])
        };
        Self::new(theta, shape(means[1]), shape(means[2]))
    }

    /// The null-hypothesis prior (means 1) used to build ROPEs.
    pub fn null(family: PriorFamily, sd: f64) -> Result<Self> {
        Self::from_family(family, [1.0, 1.0, 1.0], sd)
    }

    pub fn with_paper_literal_lognormal(mut self, on: bool) -> Self {
        self.paper_literal_lognormal = on;
        self
    }

    /// Checks the family combination rules as well as the values.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        if self.nu.is_fixed() || self.gamma.is_fixed() {
            return arg("only the scale theta may be fixed");
        }
        if self.nu.family != self.gamma.family {
            return arg("nu and gamma must share a prior family");
        }
        Ok(())
    }

    /// Checks only that means and sds are usable. Specs that fix the shape
    /// parameters (degenerate, evaluation-only) pass this check.
    pub fn validate_values(&self) -> Result<()> {
        for which in Param::ALL {
            self.get(which).validate().map_err(|e| match e {
                Error::Argument(m) => Error::Argument(format!("{which}: {m}")),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn get(&self, which: Param) -> &ParamPrior {
        match which {
            Param::Theta => &self.theta,
            Param::Nu => &self.nu,
            Param::Gamma => &self.gamma,
        }
    }

    pub fn means(&self) -> [f64; 3] {
        [self.theta.mean, self.nu.mean, self.gamma.mean]
    }

    pub fn mean_params(&self) -> Result<PgwParams> {
        PgwParams::from_array(self.means())
    }

    /// Parameters sampled by MCMC, in `(θ, ν, γ)` order.
    pub fn free_params(&self) -> Vec<Param> {
        Param::ALL.into_iter().filter(|w| !self.get(*w).is_fixed()).collect()
    }

    /// Recovers the named family combination, if the spec is one of them.
    pub fn family(&self) -> Option<PriorFamily> {
        PriorFamily::ALL.into_iter().find(|f| {
            f.shape_family() == self.nu.family
                && f.fixes_scale() == self.theta.is_fixed()
                && (self.theta.is_fixed() || self.theta.family == self.nu.family)
        })
    }
}

/// Sum of the independent univariate log densities; fixed parameters must sit
/// exactly at their preset value and contribute nothing.
pub fn prior_log_density(spec: &PriorSpec, p: &PgwParams) -> Result<f64> {
    let values = p.as_array();
    let mut total = 0.0;
    for which in Param::ALL {
        let prior = spec.get(which);
        let x = values[which.index()];
        if prior.is_fixed() {
            if x != prior.mean {
                return arg(format!("{which} is fixed at {} but evaluated at {x}", prior.mean));
            }
            continue;
        }
        total += prior.log_density(x, spec.paper_literal_lognormal)?;
    }
    Ok(total)
}

pub fn prior_quantile(spec: &PriorSpec, which: Param, prob: f64) -> Result<f64> {
    let prior = spec.get(which);
    if prior.is_fixed() {
        return arg(format!("{which} is fixed; it has no quantiles"));
    }
    prior.quantile(prob, spec.paper_literal_lognormal)
}

/// Prior belief about when an adverse reaction occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Belief {
    None,
    Q1,
    Q2,
    Q3,
}

impl Belief {
    pub const ALL: [Belief; 4] = [Belief::None, Belief::Q1, Belief::Q2, Belief::Q3];

    /// Quarter of the observation period (1..=3); `None` for no belief.
    pub fn quarter(self) -> Option<u8> {
        match self {
            Belief::None => None,
            Belief::Q1 => Some(1),
            Belief::Q2 => Some(2),
            Belief::Q3 => Some(3),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Belief::None => "none",
            Belief::Q1 => "q1",
            Belief::Q2 => "q2",
            Belief::Q3 => "q3",
        }
    }
}

impl fmt::Display for Belief {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Belief {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Belief::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown prior belief `{s}`")))
    }
}

/// Prior means `(θ̄, ν̄, γ̄)` for a belief over a given observation horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefPreset {
    pub belief: Belief,
    pub horizon: f64,
    /// Expected event time encoded by the belief, in days.
    pub expected_time: Option<f64>,
    pub means: [f64; 3],
}

const NULL_MEANS: [f64; 3] = [1.0, 1.0, 1.0];

// (horizon, [(expected time, means); 3])
type PresetRow = (f64, [(f64, [f64; 3]); 3]);

const PRESET_TABLE: [PresetRow; 3] = [
    (
        365.0,
        [
            (91.0, [1.0, 0.207, 1.0]),
            (183.0, [20.0, 5.5, 14.0]),
            (274.0, [300.0, 4.0, 1.0]),
        ],
    ),
    (
        21.0,
        [
            (5.25, [2.5, 0.5, 1.0]),
            (10.5, [3.0, 3.0, 5.0]),
            (15.75, [18.0, 5.0, 1.0]),
        ],
    ),
    (
        1095.0,
        [
            (274.0, [200.0, 0.63, 1.0]),
            (548.0, [30.0, 3.2, 10.0]),
            (821.0, [700.0, 14.0, 4.0]),
        ],
    ),
];

pub fn shipped_horizons() -> Vec<f64> {
    PRESET_TABLE.iter().map(|(h, _)| *h).collect()
}

/// Every shipped preset: the three quarter beliefs for each shipped horizon
/// plus the no-belief preset per horizon.
pub fn builtin_presets() -> Vec<BeliefPreset> {
    let mut out = Vec::new();
    for (horizon, rows) in PRESET_TABLE {
        out.push(BeliefPreset {
            belief: Belief::None,
            horizon,
            expected_time: None,
            means: NULL_MEANS,
        });
        for (belief, (et, means)) in [Belief::Q1, Belief::Q2, Belief::Q3].into_iter().zip(rows) {
            out.push(BeliefPreset {
                belief,
                horizon,
                expected_time: Some(et),
                means,
            });
        }
    }
    out
}

/// Looks up a preset. `none` is available for any horizon.
pub fn preset(belief: Belief, horizon: f64) -> Result<BeliefPreset> {
    if belief == Belief::None {
        return Ok(BeliefPreset {
            belief,
            horizon,
            expected_time: None,
            means: NULL_MEANS,
        });
    }
    builtin_presets()
        .into_iter()
        .find(|p| p.belief == belief && p.horizon == horizon)
        .ok_or_else(|| {
            Error::Argument(format!(
                "no `{belief}` preset for horizon {horizon}; shipped horizons are {:?}",
                shipped_horizons()
            ))
        })
}
