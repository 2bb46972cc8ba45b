//! HDI+ROPE decision layer.
//!
//! Each shape parameter gets a region of practical equivalence built from the
//! null prior's quantiles and a credibility interval from its posterior draws.
//! Comparing the two yields an interim outcome per parameter, and a
//! combination rule turns the pair of outcomes into a signal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::mcmc::{run_chains, McmcSettings, PosteriorDraws};
use crate::pgw::TteDataset;
use crate::prior::{Param, ParamPrior, PriorSpec, DEFAULT_PRIOR_SD};

/// Minimum effective sample size recommended for HDI+ROPE decisions.
pub const MIN_ESS: f64 = 10_000.0;
/// R̂ above this value is reported as possible non-convergence.
pub const MAX_RHAT: f64 = 1.1;
/// Minimum number of draws accepted by [`eti`] and [`hdi`].
pub const MIN_SAMPLES: usize = 100;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return arg(format!("interval bounds out of order: [{lo}, {hi}]"));
        }
        Ok(Interval { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.6}, {:.6}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiType {
    Eti,
    Hdi,
}

impl CiType {
    pub const ALL: [CiType; 2] = [CiType::Eti, CiType::Hdi];

    pub fn as_str(self) -> &'static str {
        match self {
            CiType::Eti => "eti",
            CiType::Hdi => "hdi",
        }
    }
}

impl fmt::Display for CiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CiType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eti" => Ok(CiType::Eti),
            "hdi" => Ok(CiType::Hdi),
            _ => arg(format!("unknown credibility interval type `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CombinationRule {
    #[serde(rename = "option1")]
    Option1,
    #[serde(rename = "option2")]
    Option2,
    #[serde(rename = "option3")]
    Option3,
}

impl CombinationRule {
    pub const ALL: [CombinationRule; 3] = [
        CombinationRule::Option1,
        CombinationRule::Option2,
        CombinationRule::Option3,
    ];

    pub fn number(self) -> u8 {
        match self {
            CombinationRule::Option1 => 1,
            CombinationRule::Option2 => 2,
            CombinationRule::Option3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(CombinationRule::Option1),
            2 => Ok(CombinationRule::Option2),
            3 => Ok(CombinationRule::Option3),
            _ => arg(format!("combination rule must be 1, 2 or 3, got {n}")),
        }
    }
}

impl fmt::Display for CombinationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "option{}", self.number())
    }
}

impl FromStr for CombinationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim_start_matches("option");
        digits
            .parse::<u8>()
            .map_err(|_| Error::Argument(format!("unknown combination rule `{s}`")))
            .and_then(CombinationRule::from_number)
    }
}

/// Tuning parameters of the test. Levels are coverages: `0.8` means an 80%
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub rope_level: f64,
    pub ci_level: f64,
    pub ci_type: CiType,
    pub combination_rule: CombinationRule,
    /// Standard deviation of the null prior the ROPE is built from.
    #[serde(default = "default_null_sd")]
    pub null_prior_sd: f64,
}

fn default_null_sd() -> f64 {
    DEFAULT_PRIOR_SD
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig::recommended()
    }
}

impl TestConfig {
    /// 80% ETI ROPE, 80% HDI, option 2.
    pub fn recommended() -> Self {
        TestConfig {
            rope_level: 0.8,
            ci_level: 0.8,
            ci_type: CiType::Hdi,
            combination_rule: CombinationRule::Option2,
            null_prior_sd: DEFAULT_PRIOR_SD,
        }
    }

    pub fn is_recommended(&self) -> bool {
        let r = TestConfig::recommended();
        self.rope_level == r.rope_level
            && self.ci_level == r.ci_level
            && self.ci_type == r.ci_type
            && self.combination_rule == r.combination_rule
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rope_level", self.rope_level), ("ci_level", self.ci_level)] {
            if !(v > 0.0 && v < 1.0) {
                return arg(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.null_prior_sd.is_finite() && self.null_prior_sd > 0.0) {
            return arg("null_prior_sd must be positive");
        }
        Ok(())
    }

    /// Stable label such as `rope0.80-hdi0.80-option2`.
    pub fn label(&self) -> String {
        format!(
            "rope{:.2}-{}{:.2}-{}",
            self.rope_level, self.ci_type, self.ci_level, self.combination_rule
        )
    }
}

/// The tuning grid of credibility levels, 0.50, 0.55, ..., 0.95.
pub fn level_grid() -> Vec<f64> {
    (10..=19).map(|k| k as f64 * 0.05).map(round_level).collect()
}

/// Rounds a level to two decimals so grid values compare exactly.
pub fn round_level(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterimOutcome {
    Accepted,
    Rejected,
    Undecided,
}

impl InterimOutcome {
    pub const ALL: [InterimOutcome; 3] = [
        InterimOutcome::Accepted,
        InterimOutcome::Rejected,
        InterimOutcome::Undecided,
    ];

    pub fn code(self) -> char {
        match self {
            InterimOutcome::Accepted => 'a',
            InterimOutcome::Rejected => 'r',
            InterimOutcome::Undecided => 'u',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'a' => Some(InterimOutcome::Accepted),
            'r' => Some(InterimOutcome::Rejected),
            'u' => Some(InterimOutcome::Undecided),
            _ => None,
        }
    }
}

impl fmt::Display for InterimOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterimOutcome::Accepted => "accepted",
            InterimOutcome::Rejected => "rejected",
            InterimOutcome::Undecided => "undecided",
        })
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return arg(format!("credibility level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

/// Equal-tailed ROPE `[q((1-α)/2), q((1+α)/2)]` from a null prior entry.
pub fn rope_interval(null_prior: &ParamPrior, level: f64, paper_literal: bool) -> Result<Interval> {
    check_level(level)?;
    if null_prior.is_fixed() {
        return arg("cannot build a ROPE from a fixed parameter");
    }
    if null_prior.mean != 1.0 {
        return arg(format!("null prior must have mean 1, got {}", null_prior.mean));
    }
    let lo = null_prior.quantile((1.0 - level) / 2.0, paper_literal)?;
    let hi = null_prior.quantile((1.0 + level) / 2.0, paper_literal)?;
    Interval::new(lo, hi)
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return arg(format!("at least {MIN_SAMPLES} samples required, got {n}"));
    }
    Ok(())
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    check_samples(samples.len())?;
    if samples.iter().any(|x| x.is_nan()) {
        return arg("samples contain NaN");
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Quantile with linear interpolation between order statistics of a sorted
/// sample.
fn interpolated_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Number of draws an HDI window of coverage `level` spans: `ceil(level · n)`,
/// with a small slack so that products such as `0.55 · 100` are not pushed
/// up by representation error.
pub fn hdi_window_len(n: usize, level: f64) -> usize {
    ((level * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

pub(crate) fn eti_sorted(sorted: &[f64], level: f64) -> Interval {
    Interval {
        lo: interpolated_quantile(sorted, (1.0 - level) / 2.0),
        hi: interpolated_quantile(sorted, (1.0 + level) / 2.0),
    }
}

pub(crate) fn hdi_sorted(sorted: &[f64], level: f64) -> Interval {
    let n = sorted.len();
    let m = hdi_window_len(n, level);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=n - m {
        let w = sorted[i + m - 1] - sorted[i];
        if w < best_width {
            best_width = w;
            best = i;
        }
    }
    Interval {
        lo: sorted[best],
        hi: sorted[best + m - 1],
    }
}

/// Equal-tailed credibility interval of the draws.
pub fn eti(samples: &[f64], level: f64) -> Result<Interval> {
    check_level(level)?;
    Ok(eti_sorted(&sorted_copy(samples)?, level))
}

/// Shortest interval containing `ceil(level · n)` of the sorted draws; ties go
/// to the leftmost window.
pub fn hdi(samples: &[f64], level: f64) -> Result<Interval> {
    check_level(level)?;
    Ok(hdi_sorted(&sorted_copy(samples)?, level))
}

pub fn credibility_interval(samples: &[f64], level: f64, ci_type: CiType) -> Result<Interval> {
    match ci_type {
        CiType::Eti => eti(samples, level),
        CiType::Hdi => hdi(samples, level),
    }
}

pub fn single_outcome(ci: &Interval, rope: &Interval) -> InterimOutcome {
    if rope.contains_interval(ci) {
        InterimOutcome::Accepted
    } else if !rope.intersects(ci) {
        InterimOutcome::Rejected
    } else {
        InterimOutcome::Undecided
    }
}

/// Signal decision from the two interim outcomes.
pub fn combine(nu: InterimOutcome, gamma: InterimOutcome, rule: CombinationRule) -> bool {
    use InterimOutcome::*;
    match rule {
        CombinationRule::Option1 => nu == Rejected || gamma == Rejected || (nu == Undecided && gamma == Undecided),
        CombinationRule::Option2 => matches!(
            (nu, gamma),
            (Rejected, Rejected) | (Rejected, Undecided) | (Undecided, Rejected)
        ),
        CombinationRule::Option3 => nu == Rejected && gamma == Rejected,
    }
}

/// Convergence summary attached to a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawDiagnostics {
    pub params: Vec<Param>,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    pub accept_rate: Vec<f64>,
    pub rows: usize,
}

impl From<&PosteriorDraws> for DrawDiagnostics {
    fn from(d: &PosteriorDraws) -> Self {
        DrawDiagnostics {
            params: d.params.clone(),
            ess: d.ess.clone(),
            rhat: d.rhat.clone(),
            accept_rate: d.accept_rate.clone(),
            rows: d.rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub outcome_nu: InterimOutcome,
    pub outcome_gamma: InterimOutcome,
    pub signal: bool,
    pub rope_nu: Interval,
    pub rope_gamma: Interval,
    pub ci_nu: Interval,
    pub ci_gamma: Interval,
    pub config: TestConfig,
    pub recommended: bool,
    pub diagnostics: DrawDiagnostics,
    pub warnings: Vec<String>,
}

/// ROPEs for `ν` and `γ` from a null prior.
pub fn shape_ropes(null_spec: &PriorSpec, level: f64) -> Result<(Interval, Interval)> {
    let lit = null_spec.paper_literal_lognormal;
    Ok((
        rope_interval(&null_spec.nu, level, lit)?,
        rope_interval(&null_spec.gamma, level, lit)?,
    ))
}

fn shape_column(draws: &PosteriorDraws, which: Param) -> Result<&[f64]> {
    draws
        .column(which)
        .ok_or_else(|| Error::Argument(format!("posterior draws lack a `{which}` column")))
}

/// Applies the test to an existing posterior sample.
pub fn decide_from_draws(draws: &PosteriorDraws, null_spec: &PriorSpec, config: &TestConfig) -> Result<TestDecision> {
    config.validate()?;
    let (rope_nu, rope_gamma) = shape_ropes(null_spec, config.rope_level)?;
    let ci_nu = credibility_interval(shape_column(draws, Param::Nu)?, config.ci_level, config.ci_type)?;
    let ci_gamma = credibility_interval(shape_column(draws, Param::Gamma)?, config.ci_level, config.ci_type)?;
    let outcome_nu = single_outcome(&ci_nu, &rope_nu);
    let outcome_gamma = single_outcome(&ci_gamma, &rope_gamma);

    let mut warnings = Vec::new();
    for which in [Param::Nu, Param::Gamma] {
        if let Some(ess) = draws.ess_of(which) {
            if ess < MIN_ESS {
                warnings.push(format!(
                    "effective sample size of {which} is {ess:.0}, below the recommended {MIN_ESS:.0}"
                ));
            }
        }
    }
    for (p, r) in draws.params.iter().zip(&draws.rhat) {
        if *r > MAX_RHAT {
            warnings.push(format!("split R-hat of {p} is {r:.3}; chains may not have converged"));
        }
    }

    Ok(TestDecision {
        outcome_nu,
        outcome_gamma,
        signal: combine(outcome_nu, outcome_gamma, config.combination_rule),
        rope_nu,
        rope_gamma,
        ci_nu,
        ci_gamma,
        config: *config,
        recommended: config.is_recommended(),
        diagnostics: DrawDiagnostics::from(draws),
        warnings,
    })
}

/// Fits the posterior and applies the test.
pub fn run_test(
    data: &TteDataset,
    spec: &PriorSpec,
    null_spec: &PriorSpec,
    settings: &McmcSettings,
    config: &TestConfig,
) -> Result<(TestDecision, PosteriorDraws)> {
    spec.validate()?;
    null_spec.validate()?;
    config.validate()?;
    let draws = run_chains(data, spec, settings)?;
    let decision = decide_from_draws(&draws, null_spec, config)?;
    Ok((decision, draws))
}

/// Credibility intervals for `ν` and `γ` at every level of a grid, for both
/// interval types, computed from one sort of each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTable {
    pub levels: Vec<f64>,
    /// `[level][ci_type][param]`, param 0 = ν, 1 = γ, ci_type 0 = ETI, 1 = HDI.
    pub intervals: Vec<[[Interval; 2]; 2]>,
}

impl IntervalTable {
    pub fn from_draws(draws: &PosteriorDraws, levels: &[f64]) -> Result<Self> {
        let nu = sorted_copy(shape_column(draws, Param::Nu)?)?;
        let gamma = sorted_copy(shape_column(draws, Param::Gamma)?)?;
        let mut intervals = Vec::with_capacity(levels.len());
        for &level in levels {
            check_level(level)?;
            intervals.push([
                [eti_sorted(&nu, level), eti_sorted(&gamma, level)],
                [hdi_sorted(&nu, level), hdi_sorted(&gamma, level)],
            ]);
        }
        Ok(IntervalTable {
            levels: levels.to_vec(),
            intervals,
        })
    }

    pub fn get(&self, level: f64, ci_type: CiType) -> Option<(Interval, Interval)> {
        let i = self.levels.iter().position(|l| *l == level)?;
        let t = match ci_type {
            CiType::Eti => 0,
            CiType::Hdi => 1,
        };
        Some((self.intervals[i][t][0], self.intervals[i][t][1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorFamily;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rope_from_standard_lognormal_null() {
        let null = PriorSpec::null(PriorFamily::LogLogLog, 10.0).unwrap();
        let rope = rope_interval(&null.nu, 0.8, false).unwrap();
        let (mu, sigma) = (-0.5 * 101f64.ln(), 101f64.ln().sqrt());
        let z = 1.281_551_565_544_600_5;
        assert!((rope.lo - (mu - z * sigma).exp()).abs() < 1e-12);
        assert!((rope.hi - (mu + z * sigma).exp()).abs() < 1e-12);
        assert!((rope.lo - 0.0063365).abs() < 1e-5);
        assert!((rope.hi - 1.5617).abs() < 2e-3);

        let tiny = rope_interval(&null.nu, 1e-9, false).unwrap();
        let median = null.nu.quantile(0.5, false).unwrap();
        assert!((tiny.lo - median).abs() < 1e-8 && (tiny.hi - median).abs() < 1e-8);

        let half = rope_interval(&null.gamma, 0.5, false).unwrap();
        assert_eq!(half.lo, null.gamma.quantile(0.25, false).unwrap());
        assert_eq!(half.hi, null.gamma.quantile(0.75, false).unwrap());

        let fixed = PriorSpec::null(PriorFamily::FixLogLog, 10.0).unwrap();
        assert!(rope_interval(&fixed.theta, 0.8, false).is_err());
        let shifted = ParamPrior::lognormal(2.0, 10.0);
        assert!(rope_interval(&shifted, 0.8, false).is_err());
    }

    #[test]
    fn eti_examples() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let ci = eti(&xs, 0.9).unwrap();
        assert!((ci.lo - 5.95).abs() < 1e-12 && (ci.hi - 95.05).abs() < 1e-12);
        assert_eq!(eti(&[3.0; 150], 0.8).unwrap(), Interval { lo: 3.0, hi: 3.0 });
        assert!(eti(&xs[..99], 0.9).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ci = eti(&zs, 0.8).unwrap();
        assert!((ci.lo + 1.2816).abs() < 0.01 && (ci.hi - 1.2816).abs() < 0.01);
        let h = hdi(&zs, 0.8).unwrap();
        assert!((h.lo - ci.lo).abs() < 0.01 && (h.hi - ci.hi).abs() < 0.01);
    }

    #[test]
    fn hdi_small_example() {
        let xs = [1.0, 1.0, 1.0, 2.0, 9.0, 10.0];
        assert_eq!(hdi_sorted(&xs, 0.5), Interval { lo: 1.0, hi: 1.0 });
        assert_eq!(hdi_sorted(&xs, 0.8), Interval { lo: 1.0, hi: 9.0 });
    }

    #[test]
    fn hdi_ties_go_left() {
        let xs: Vec<f64> = (0..200).map(f64::from).collect();
        let h = hdi(&xs, 0.5).unwrap();
        assert_eq!(h, Interval { lo: 0.0, hi: 99.0 });
    }

    #[test]
    fn window_len_is_robust_to_representation() {
        assert_eq!(hdi_window_len(100, 0.55), 55);
        assert_eq!(hdi_window_len(1000, 0.8), 800);
        assert_eq!(hdi_window_len(101, 0.5), 51);
    }

    #[test]
    fn outcome_examples() {
        let rope = Interval { lo: 0.5, hi: 1.5 };
        let o = |lo, hi| single_outcome(&Interval { lo, hi }, &rope);
        assert_eq!(o(0.9, 1.1), InterimOutcome::Accepted);
        assert_eq!(o(2.0, 3.0), InterimOutcome::Rejected);
        assert_eq!(o(1.4, 2.0), InterimOutcome::Undecided);
        assert_eq!(o(1.5, 2.0), InterimOutcome::Undecided);
        assert_eq!(o(0.5, 1.5), InterimOutcome::Accepted);
    }

    #[test]
    fn combine_examples() {
        use InterimOutcome::*;
        assert!(combine(Rejected, Rejected, CombinationRule::Option3));
        assert!(combine(Undecided, Undecided, CombinationRule::Option1));
        assert!(!combine(Accepted, Rejected, CombinationRule::Option2));
        assert!(!combine(Undecided, Undecided, CombinationRule::Option2));
        assert!(!combine(Accepted, Undecided, CombinationRule::Option1));
    }

    #[test]
    fn config_labels_and_parsing() {
        let c = TestConfig::recommended();
        assert!(c.is_recommended());
        assert_eq!(c.label(), "rope0.80-hdi0.80-option2");
        assert_eq!("2".parse::<CombinationRule>().unwrap(), CombinationRule::Option2);
        assert_eq!("option3".parse::<CombinationRule>().unwrap(), CombinationRule::Option3);
        assert!("4".parse::<CombinationRule>().is_err());
        assert_eq!("HDI".parse::<CiType>().unwrap(), CiType::Hdi);
        assert_eq!(level_grid().len(), 10);
        assert_eq!(level_grid()[6], 0.8);
    }

    #[test]
    fn interval_table_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let chains: Vec<Vec<[f64; 3]>> = (0..2)
            .map(|_| {
                (0..300)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        let b: f64 = StandardNormal.sample(&mut rng);
                        [1.0, a.exp(), (0.5 * b).exp()]
                    })
                    .collect()
            })
            .collect();
        let draws = PosteriorDraws::from_chains(vec![Param::Nu, Param::Gamma], chains).unwrap();
        let table = IntervalTable::from_draws(&draws, &level_grid()).unwrap();
        for level in level_grid() {
            let (nu, gamma) = table.get(level, CiType::Hdi).unwrap();
            assert_eq!(nu, hdi(draws.column(Param::Nu).unwrap(), level).unwrap());
            assert_eq!(gamma, hdi(draws.column(Param::Gamma).unwrap(), level).unwrap());
            let (nu, _) = table.get(level, CiType::Eti).unwrap();
            assert_eq!(nu, eti(draws.column(Param::Nu).unwrap(), level).unwrap());
        }
    }
}
