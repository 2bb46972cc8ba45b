use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use bpgwsp_core::mcmc::McmcSettings;
use bpgwsp_core::prior::{preset, Belief, PriorFamily, PriorSpec, DEFAULT_PRIOR_SD};
use bpgwsp_core::ropetest::{level_grid, CiType, CombinationRule, TestConfig};
use bpgwsp_core::simgen::GridConfig;
use bpgwsp_core::tune::{AggregateOptions, ConfigGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandName {
    Simulate,
    Fit,
    Test,
    Tune,
    Report,
}

impl fmt::Display for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandName::Simulate => "simulate",
            CommandName::Fit => "fit",
            CommandName::Test => "test",
            CommandName::Tune => "tune",
            CommandName::Report => "report",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorName {
    None,
    Q1,
    Q2,
    Q3,
    Custom,
}

impl PriorName {
    fn belief(self) -> Option<Belief> {
        match self {
            PriorName::None => Some(Belief::None),
            PriorName::Q1 => Some(Belief::Q1),
            PriorName::Q2 => Some(Belief::Q2),
            PriorName::Q3 => Some(Belief::Q3),
            PriorName::Custom => None,
        }
    }
}

impl FromStr for PriorName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" => PriorName::None,
            "q1" => PriorName::Q1,
            "q2" => PriorName::Q2,
            "q3" => PriorName::Q3,
            "custom" => PriorName::Custom,
            _ => bail!("unknown prior `{s}` (expected none, q1, q2, q3 or custom)"),
        })
    }
}

/// Fully resolved settings of one invocation. Config files use the same
/// keys; absent keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<CommandName>,
    pub input: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; 0 uses every logical core.
    pub workers: usize,
    pub prior: Option<PriorName>,
    pub horizon: Option<f64>,
    pub means: Option<[f64; 3]>,
    pub prior_sd: f64,
    pub family: PriorFamily,
    pub paper_literal_lognormal: bool,
    pub rope_level: f64,
    pub ci_level: f64,
    pub ci_type: CiType,
    pub rule: u8,
    pub null_prior_sd: f64,
    pub censor: Option<f64>,
    pub chains: usize,
    pub iters: usize,
    pub burnin: usize,
    pub require_ess: bool,
    pub sample_sizes: Vec<usize>,
    pub adr_rates: Vec<f64>,
    /// Defaults to the quarter points of the horizon in whole days.
    pub expected_times: Option<Vec<f64>>,
    pub beliefs: Vec<Belief>,
    pub families: Vec<PriorFamily>,
    pub include_controls: bool,
    pub background_rate: f64,
    pub rel_sd: f64,
    pub reps: usize,
    pub rope_levels: Vec<f64>,
    pub ci_levels: Vec<f64>,
    pub ci_types: Vec<CiType>,
    pub rules: Vec<u8>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridConfig::default();
        let mcmc = McmcSettings::default();
        let test = TestConfig::recommended();
        RunConfig {
            command: None,
            input: None,
            seed: 0,
            workers: 0,
            prior: None,
            horizon: None,
            means: None,
            prior_sd: DEFAULT_PRIOR_SD,
            family: PriorFamily::LogLogLog,
            paper_literal_lognormal: false,
            rope_level: test.rope_level,
            ci_level: test.ci_level,
            ci_type: test.ci_type,
            rule: test.combination_rule.number(),
            null_prior_sd: test.null_prior_sd,
            censor: None,
            chains: mcmc.chains,
            iters: mcmc.iters_per_chain,
            burnin: mcmc.burn_in,
            require_ess: false,
            sample_sizes: grid.sample_sizes,
            adr_rates: grid.adr_rates,
            expected_times: None,
            beliefs: grid.beliefs,
            families: grid.families,
            include_controls: grid.include_controls,
            background_rate: grid.background_rate,
            rel_sd: grid.rel_sd,
            reps: grid.repetitions,
            rope_levels: level_grid(),
            ci_levels: level_grid(),
            ci_types: CiType::ALL.to_vec(),
            rules: vec![1, 2, 3],
        }
    }
}

/// Default grid horizon when none is configured.
pub const DEFAULT_HORIZON: f64 = 365.0;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    /// Fills choices implied by other keys and checks consistency.
    pub fn resolve(mut self, command: CommandName) -> Result<Self> {
        if let Some(c) = self.command {
            if c != command {
                bail!("config was recorded for `{c}` but `{command}` was invoked");
            }
        }
        self.command = Some(command);
        self.prior = Some(match (self.prior, self.means) {
            (None, Some(_)) | (Some(PriorName::Custom), Some(_)) => PriorName::Custom,
            (Some(PriorName::Custom), None) => bail!("--prior custom requires --means a,b,c"),
            (Some(p), Some(_)) => bail!(
                "--means conflicts with the `{}` preset; use --prior custom",
                prior_str(p)
            ),
            (Some(p), None) => p,
            (None, None) => PriorName::None,
        });
        if let Some(input) = &self.input {
            if input.is_relative() {
                if let Ok(abs) = std::path::absolute(input) {
                    self.input = Some(abs);
                }
            }
        }
        self.test_config()?;
        self.mcmc_settings().validate()?;
        Ok(self)
    }

    pub fn combination_rule(&self) -> Result<CombinationRule> {
        Ok(CombinationRule::from_number(self.rule)?)
    }

    pub fn test_config(&self) -> Result<TestConfig> {
        let c = TestConfig {
            rope_level: self.rope_level,
            ci_level: self.ci_level,
            ci_type: self.ci_type,
            combination_rule: self.combination_rule()?,
            null_prior_sd: self.null_prior_sd,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn mcmc_settings(&self) -> McmcSettings {
        McmcSettings {
            chains: self.chains,
            iters_per_chain: self.iters,
            burn_in: self.burnin,
            seed: self.seed,
            ..McmcSettings::default()
        }
    }

    /// Analysis prior for a dataset observed up to `data_horizon`.
    pub fn prior_spec(&self, data_horizon: f64) -> Result<PriorSpec> {
        let horizon = self.horizon.unwrap_or(data_horizon);
        let means = match self.prior.unwrap_or(PriorName::None) {
            PriorName::Custom => self.means.context("--prior custom requires --means a,b,c")?,
            p => {
                let belief = p.belief().expect("non-custom prior names map to beliefs");
                preset(belief, horizon)
                    .with_context(|| {
                        format!(
                            "no `{}` preset for horizon {horizon}; pass --horizon or --means",
                            prior_str(p)
                        )
                    })?
                    .means
            }
        };
        let spec = PriorSpec::from_family(self.family, means, self.prior_sd)?
            .with_paper_literal_lognormal(self.paper_literal_lognormal);
        spec.validate()?;
        Ok(spec)
    }

    /// Null prior the ROPE is built from.
    pub fn null_spec(&self) -> Result<PriorSpec> {
        Ok(
            PriorSpec::null(self.family, self.null_prior_sd)?
                .with_paper_literal_lognormal(self.paper_literal_lognormal),
        )
    }

    pub fn grid_config(&self) -> GridConfig {
        let censor_time = self.censor.unwrap_or(DEFAULT_HORIZON);
        let expected_times = self
            .expected_times
            .clone()
            .unwrap_or_else(|| (1..=3).map(|k| (k as f64 * censor_time / 4.0).round()).collect());
        GridConfig {
            sample_sizes: self.sample_sizes.clone(),
            adr_rates: self.adr_rates.clone(),
            expected_times,
            beliefs: self.beliefs.clone(),
            families: self.families.clone(),
            include_controls: self.include_controls,
            censor_time,
            background_rate: self.background_rate,
            rel_sd: self.rel_sd,
            repetitions: self.reps,
            prior_sd: self.prior_sd,
            paper_literal_lognormal: self.paper_literal_lognormal,
        }
    }

    pub fn config_grid(&self) -> Result<ConfigGrid> {
        let rules = self
            .rules
            .iter()
            .map(|r| CombinationRule::from_number(*r))
            .collect::<bpgwsp_core::Result<Vec<_>>>()?;
        let grid = ConfigGrid {
            rope_levels: self.rope_levels.clone(),
            ci_levels: self.ci_levels.clone(),
            ci_types: self.ci_types.clone(),
            rules,
            null_prior_sd: self.null_prior_sd,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions {
            require_ess: self.require_ess,
            family: None,
        }
    }

    pub fn input_path(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .context("an input file is required (positional argument or --input)")
    }
}

fn prior_str(p: PriorName) -> &'static str {
    match p {
        PriorName::None => "none",
        PriorName::Q1 => "q1",
        PriorName::Q2 => "q2",
        PriorName::Q3 => "q3",
        PriorName::Custom => "custom",
    }
}

/// Parses `a,b,c` into three positive numbers.
pub fn parse_means(s: &str) -> Result<[f64; 3]> {
    let v = parse_list::<f64>(s)?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("--means expects three comma-separated values, got `{s}`"),
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("cannot parse `{}`: {e}", x.trim()))
        })
        .collect()
}
