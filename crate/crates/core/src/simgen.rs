//! Synthetic cohorts and the simulation grid.
//!
//! A cohort mixes background events spread uniformly over the observation
//! period with adverse-reaction events clustered around an expected time;
//! every remaining subject is censored at the horizon.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::pgw::TteDataset;
use crate::prior::{preset, Belief, PriorFamily, PriorSpec, DEFAULT_PRIOR_SD};
use crate::seed::derive_seed;

const MAX_RESAMPLE: usize = 1_000_000;

/// Seed stream tag for cohort generation.
pub const DATA_STREAM: u64 = 0xD47A;
/// Seed stream tag for posterior sampling.
pub const MCMC_STREAM: u64 = 0x3C3C;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    #[serde(default = "default_censor")]
    pub censor_time: f64,
    #[serde(default = "default_background")]
    pub background_rate: f64,
    /// ADR event probability as a fraction of the background rate.
    pub adr_rate: f64,
    #[serde(default)]
    pub expected_time: Option<f64>,
    #[serde(default = "default_rel_sd")]
    pub rel_sd: f64,
}

fn default_censor() -> f64 {
    365.0
}
fn default_background() -> f64 {
    0.1
}
fn default_rel_sd() -> f64 {
    0.05
}

impl ScenarioSpec {
    pub fn control(n: usize) -> Self {
        ScenarioSpec {
            n,
            censor_time: default_censor(),
            background_rate: default_background(),
            adr_rate: 0.0,
            expected_time: None,
            rel_sd: default_rel_sd(),
        }
    }

    pub fn with_adr(n: usize, adr_rate: f64, expected_time: f64) -> Self {
        ScenarioSpec {
            adr_rate,
            expected_time: Some(expected_time),
            ..ScenarioSpec::control(n)
        }
    }

    pub fn has_adr(&self) -> bool {
        self.adr_rate > 0.0
    }

    /// Probability of an ADR event per subject.
    pub fn adr_proportion(&self) -> f64 {
        self.background_rate * self.adr_rate
    }

    /// Quarter of the observation period holding the expected ADR time.
    pub fn true_quarter(&self) -> Option<u8> {
        let e = self.expected_time.filter(|_| self.has_adr())?;
        let q = (4.0 * e / self.censor_time).round();
        (1.0..=3.0).contains(&q).then_some(q as u8)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return arg("sample size must be positive");
        }
        if !(self.censor_time.is_finite() && self.censor_time > 1.0) {
            return arg(format!("censor_time must exceed 1, got {}", self.censor_time));
        }
        if !(self.background_rate > 0.0 && self.background_rate < 1.0) {
            return arg(format!(
                "background_rate must lie in (0, 1), got {}",
                self.background_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.adr_rate) {
            return arg(format!("adr_rate must lie in [0, 1], got {}", self.adr_rate));
        }
        if !(self.rel_sd.is_finite() && self.rel_sd > 0.0) {
            return arg("rel_sd must be positive");
        }
        match (self.has_adr(), self.expected_time) {
            (true, None) => arg("expected_time is required when adr_rate > 0"),
            (_, Some(e)) if !(e > 0.0 && e < self.censor_time) => {
                arg(format!("expected_time must lie in (0, {}), got {e}", self.censor_time))
            }
            _ => Ok(()),
        }
    }
}

/// A generated cohort with its composition.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub data: TteDataset,
    pub background_events: usize,
    pub adr_events: usize,
    pub warnings: Vec<String>,
}

/// Draws one cohort; identical `(spec, seed)` give identical datasets.
///
/// Rows are ordered background events, then ADR events, then censored
/// subjects. ADR times outside `(0, censor_time]` are redrawn.
pub fn generate_sample(spec: &ScenarioSpec, seed: u64) -> Result<GeneratedSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = spec.censor_time;
    let n = spec.n as u64;

    let n_bg = Binomial::new(n, spec.background_rate)
        .map_err(|e| crate::Error::Argument(e.to_string()))?
        .sample(&mut rng) as usize;
    let n_adr_drawn = if spec.has_adr() {
        Binomial::new(n, spec.adr_proportion())
            .map_err(|e| crate::Error::Argument(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };

    let mut warnings = Vec::new();
    let n_adr = if n_bg + n_adr_drawn > spec.n {
        let kept = spec.n - n_bg;
        warnings.push(format!(
            "{} events exceed the cohort of {}; ADR events truncated from {n_adr_drawn} to {kept}",
            n_bg + n_adr_drawn,
            spec.n
        ));
        kept
    } else {
        n_adr_drawn
    };

    let mut times = Vec::with_capacity(spec.n);
    let uniform = Uniform::new(1.0, horizon).map_err(|e| crate::Error::Argument(e.to_string()))?;
    times.extend((0..n_bg).map(|_| uniform.sample(&mut rng)));

    if n_adr > 0 {
        let mean = spec.expected_time.unwrap_or_default();
        let normal = Normal::new(mean, spec.rel_sd * horizon).map_err(|e| crate::Error::Argument(e.to_string()))?;
        for _ in 0..n_adr {
            times.push(draw_within(&normal, horizon, &mut rng)?);
        }
    }

    let n_events = times.len();
    times.resize(spec.n, horizon);
    let mut events = vec![true; n_events];
    events.resize(spec.n, false);

    Ok(GeneratedSample {
        data: TteDataset::new(times, events, horizon)?,
        background_events: n_bg,
        adr_events: n_adr,
        warnings,
    })
}

fn draw_within<R: Rng + ?Sized>(normal: &Normal<f64>, horizon: f64, rng: &mut R) -> Result<f64> {
    for _ in 0..MAX_RESAMPLE {
        let t = normal.sample(rng);
        if t > 0.0 && t <= horizon {
            return Ok(t);
        }
    }
    arg("ADR time distribution puts almost no mass inside the observation period")
}

/// Levels spanned by a simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub sample_sizes: Vec<usize>,
    /// Positive ADR levels; controls come from `include_controls`.
    pub adr_rates: Vec<f64>,
    pub expected_times: Vec<f64>,
    pub beliefs: Vec<Belief>,
    pub families: Vec<PriorFamily>,
    pub include_controls: bool,
    pub censor_time: f64,
    pub background_rate: f64,
    pub rel_sd: f64,
    pub repetitions: usize,
    pub prior_sd: f64,
    pub paper_literal_lognormal: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            sample_sizes: vec![500, 3000, 5000],
            adr_rates: vec![0.5, 1.0],
            expected_times: vec![91.0, 183.0, 274.0],
            beliefs: Belief::ALL.to_vec(),
            families: PriorFamily::ALL.to_vec(),
            include_controls: true,
            censor_time: 365.0,
            background_rate: 0.1,
            rel_sd: 0.05,
            repetitions: 100,
            prior_sd: DEFAULT_PRIOR_SD,
            paper_literal_lognormal: false,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.beliefs.is_empty() || self.families.is_empty() {
            return arg("grid level lists must be non-empty");
        }
        if self.adr_rates.is_empty() || self.expected_times.is_empty() {
            return arg("grid needs at least one ADR rate and one expected time");
        }
        if self.adr_rates.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return arg("grid ADR rates must lie in (0, 1]; controls are added separately");
        }
        if self.repetitions == 0 {
            return arg("repetitions must be positive");
        }
        if !(self.prior_sd.is_finite() && self.prior_sd > 0.0) {
            return arg("prior_sd must be positive");
        }
        for b in &self.beliefs {
            preset(*b, self.censor_time)?;
        }
        Ok(())
    }
}

/// One cell of the grid: a scenario analysed under one prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub id: usize,
    pub scenario_index: usize,
    pub scenario: ScenarioSpec,
    pub belief: Belief,
    pub family: PriorFamily,
}

impl Setting {
    /// Ground truth label: the cohort contains an ADR.
    pub fn truth(&self) -> bool {
        self.scenario.has_adr()
    }

    pub fn prior_spec(&self, prior_sd: f64, paper_literal: bool) -> Result<PriorSpec> {
        let p = preset(self.belief, self.scenario.censor_time)?;
        Ok(PriorSpec::from_family(self.family, p.means, prior_sd)?.with_paper_literal_lognormal(paper_literal))
    }

    /// `|belief quarter − true quarter|`; `None` for controls or no belief.
    pub fn belief_offset(&self) -> Option<u8> {
        let b = self.belief.quarter()?;
        let t = self.scenario.true_quarter()?;
        Some(b.abs_diff(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub config: GridConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub settings: Vec<Setting>,
    pub repetitions: usize,
}

impl ScenarioGrid {
    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    pub fn adr_settings(&self) -> usize {
        self.settings.iter().filter(|s| s.truth()).count()
    }

    pub fn control_settings(&self) -> usize {
        self.len() - self.adr_settings()
    }

    /// Seed of the cohort shared by every setting built on `scenario_index`.
    pub fn data_seed(master: u64, scenario_index: usize, rep: usize) -> u64 {
        derive_seed(master, &[DATA_STREAM, scenario_index as u64, rep as u64])
    }

    pub fn mcmc_seed(master: u64, setting_id: usize, rep: usize) -> u64 {
        derive_seed(master, &[MCMC_STREAM, setting_id as u64, rep as u64])
    }
}

/// Cartesian product of scenarios and priors. Positive scenarios vary `n`,
/// ADR rate and expected time; controls vary only `n`.
pub fn build_grid(config: &GridConfig) -> Result<ScenarioGrid> {
    config.validate()?;
    let base = |n: usize| ScenarioSpec {
        n,
        censor_time: config.censor_time,
        background_rate: config.background_rate,
        adr_rate: 0.0,
        expected_time: None,
        rel_sd: config.rel_sd,
    };
    let mut scenarios = Vec::new();
    for &n in &config.sample_sizes {
        for &adr_rate in &config.adr_rates {
            for &e in &config.expected_times {
                scenarios.push(ScenarioSpec {
                    adr_rate,
                    expected_time: Some(e),
                    ..base(n)
                });
            }
        }
    }
    if config.include_controls {
        scenarios.extend(config.sample_sizes.iter().map(|&n| base(n)));
    }
    for s in &scenarios {
        s.validate()?;
    }

    let mut settings = Vec::new();
    for (scenario_index, scenario) in scenarios.iter().enumerate() {
        for &belief in &config.beliefs {
            for &family in &config.families {
                settings.push(Setting {
                    id: settings.len(),
                    scenario_index,
                    scenario: *scenario,
                    belief,
                    family,
                });
            }
        }
    }
    Ok(ScenarioGrid {
        config: config.clone(),
        scenarios,
        settings,
        repetitions: config.repetitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_cardinality() {
        let grid = build_grid(&GridConfig::default()).unwrap();
        assert_eq!(grid.len(), 336);
        assert_eq!(grid.adr_settings(), 288);
        assert_eq!(grid.control_settings(), 48);
        assert_eq!(grid.scenarios.len(), 21);

        let one_family = GridConfig {
            families: vec![PriorFamily::LogLogLog],
            ..GridConfig::default()
        };
        assert_eq!(build_grid(&one_family).unwrap().len(), 84);
    }

    #[test]
    fn degenerate_grid() {
        let cfg = GridConfig {
            sample_sizes: vec![500],
            adr_rates: vec![1.0],
            expected_times: vec![91.0],
            beliefs: vec![Belief::Q1],
            families: vec![PriorFamily::LogLogLog],
            ..GridConfig::default()
        };
        let grid = build_grid(&cfg).unwrap();
        assert_eq!((grid.adr_settings(), grid.control_settings()), (1, 1));
    }

    #[test]
    fn quarters_and_offsets() {
        assert_eq!(ScenarioSpec::with_adr(500, 1.0, 91.0).true_quarter(), Some(1));
        assert_eq!(ScenarioSpec::with_adr(500, 1.0, 183.0).true_quarter(), Some(2));
        assert_eq!(ScenarioSpec::with_adr(500, 1.0, 274.0).true_quarter(), Some(3));
        assert_eq!(ScenarioSpec::control(500).true_quarter(), None);
        let s = Setting {
            id: 0,
            scenario_index: 0,
            scenario: ScenarioSpec::with_adr(500, 1.0, 91.0),
            belief: Belief::Q3,
            family: PriorFamily::LogLogLog,
        };
        assert_eq!(s.belief_offset(), Some(2));
    }

    #[test]
    fn null_scenario_has_only_background_events() {
        let spec = ScenarioSpec::control(3000);
        let s = generate_sample(&spec, 3).unwrap();
        assert_eq!(s.adr_events, 0);
        assert_eq!(s.data.event_count(), s.background_events);
        assert!(s.data.censored_at_horizon());
        assert_eq!(s.data.len(), 3000);
    }

    #[test]
    fn background_count_mean() {
        let spec = ScenarioSpec::control(500);
        let total: usize = (0..1000)
            .map(|seed| generate_sample(&spec, seed).unwrap().background_events)
            .sum();
        let mean = total as f64 / 1000.0;
        assert!((48.6..=51.4).contains(&mean), "mean {mean}");
    }

    #[test]
    fn adr_time_spread() {
        let spec = ScenarioSpec::with_adr(5000, 1.0, 91.0);
        let mut adr_times = Vec::new();
        let mut seed = 0;
        while adr_times.len() < 10_000 {
            let s = generate_sample(&spec, seed).unwrap();
            let start = s.background_events;
            adr_times.extend_from_slice(&s.data.times()[start..start + s.adr_events]);
            seed += 1;
        }
        let n = adr_times.len() as f64;
        let mean = adr_times.iter().sum::<f64>() / n;
        let sd = (adr_times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / 18.25 - 1.0).abs() < 0.05, "sd {sd}");
        assert!((mean - 91.0).abs() < 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ScenarioSpec::with_adr(3000, 0.5, 183.0);
        assert_eq!(generate_sample(&spec, 77).unwrap(), generate_sample(&spec, 77).unwrap());
        assert_ne!(generate_sample(&spec, 77).unwrap(), generate_sample(&spec, 78).unwrap());
    }

    #[test]
    fn overflowing_events_are_truncated() {
        let spec = ScenarioSpec {
            n: 20,
            background_rate: 0.9,
            adr_rate: 1.0,
            expected_time: Some(91.0),
            ..ScenarioSpec::control(20)
        };
        let truncated = (0..50)
            .map(|seed| generate_sample(&spec, seed).unwrap())
            .find(|s| !s.warnings.is_empty())
            .expect("some seed overflows");
        assert_eq!(truncated.data.event_count(), 20);
        assert_eq!(truncated.background_events + truncated.adr_events, 20);
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = ScenarioSpec::with_adr(100, 1.0, 400.0);
        assert!(s.validate().is_err());
        s.expected_time = None;
        assert!(s.validate().is_err());
        assert!(ScenarioSpec::control(0).validate().is_err());
    }
}
