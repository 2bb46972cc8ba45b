use std::path::PathBuf;

use anyhow::Result;
use bpgwsp_core::prior::{Belief, PriorFamily};
use bpgwsp_core::ropetest::CiType;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_list, parse_means, CommandName, PriorName, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "bpgwsp",
    version,
    about = "Bayesian PgW shape parameter test for time-to-event signal detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the simulation grid's cohorts and a manifest
    Simulate(RunArgs),
    /// Fit the PgW posterior to a `time,event` CSV
    Fit(RunArgs),
    /// Fit and apply the HDI+ROPE signal test to a `time,event` CSV
    Test(RunArgs),
    /// Run the tuning sweep and rank test configurations
    Tune(RunArgs),
    /// Render a decision, fit or tuning artifact as text
    Report(RunArgs),
}

impl Command {
    pub fn split(self) -> (CommandName, RunArgs) {
        match self {
            Command::Simulate(a) => (CommandName::Simulate, a),
            Command::Fit(a) => (CommandName::Fit, a),
            Command::Test(a) => (CommandName::Test, a),
            Command::Tune(a) => (CommandName::Tune, a),
            Command::Report(a) => (CommandName::Report, a),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Input dataset or artifact
    #[arg(value_name = "INPUT")]
    pub input_pos: Option<PathBuf>,
    #[arg(long, conflicts_with = "input_pos")]
    pub input: Option<PathBuf>,
    /// Output directory
    #[arg(long, short, default_value = "bpgwsp-out")]
    pub out: PathBuf,
    /// JSON config file using the flag names as keys (a run.json replays a run)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every logical core
    #[arg(long)]
    pub workers: Option<usize>,
    /// Prior belief preset: none, q1, q2, q3 or custom
    #[arg(long)]
    pub prior: Option<PriorName>,
    /// Horizon the belief preset is looked up for (days)
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Prior means of theta, nu and gamma, e.g. 1,1,1
    #[arg(long, value_parser = parse_means)]
    pub means: Option<[f64; 3]>,
    #[arg(long)]
    pub prior_sd: Option<f64>,
    /// fix-log-log, log-log-log, fix-gam-gam or gam-gam-gam
    #[arg(long)]
    pub family: Option<PriorFamily>,
    #[arg(long)]
    pub rope_level: Option<f64>,
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// eti or hdi
    #[arg(long)]
    pub ci_type: Option<CiType>,
    /// Combination rule 1, 2 or 3
    #[arg(long)]
    pub rule: Option<u8>,
    /// Standard deviation of the null prior the ROPE is built from
    #[arg(long)]
    pub null_prior_sd: Option<f64>,
    /// Censoring horizon in days (inferred from the data when absent)
    #[arg(long)]
    pub censor: Option<f64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Retained draws per chain
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Exclude fits below the recommended ESS from tuning metrics
    #[arg(long)]
    pub require_ess: bool,
    /// Use the location formula ln m - ln(1 + sd²/m²) for lognormal priors
    #[arg(long)]
    pub paper_literal_lognormal: bool,
    /// Grid sample sizes, e.g. 500,3000,5000
    #[arg(long, value_parser = list::<usize>)]
    pub sizes: Option<List<usize>>,
    /// Positive grid ADR rates as fractions of the background rate
    #[arg(long, value_parser = list::<f64>)]
    pub adr_rates: Option<List<f64>>,
    /// Grid expected ADR times in days
    #[arg(long, value_parser = list::<f64>)]
    pub expected_times: Option<List<f64>>,
    #[arg(long, value_parser = list::<Belief>)]
    pub beliefs: Option<List<Belief>>,
    #[arg(long, value_parser = list::<PriorFamily>)]
    pub families: Option<List<PriorFamily>>,
    /// Leave control scenarios out of the grid
    #[arg(long)]
    pub no_controls: bool,
    #[arg(long)]
    pub background_rate: Option<f64>,
    #[arg(long)]
    pub rel_sd: Option<f64>,
    /// Repetitions per grid setting
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = list::<f64>)]
    pub rope_levels: Option<List<f64>>,
    #[arg(long, value_parser = list::<f64>)]
    pub ci_levels: Option<List<f64>>,
    #[arg(long, value_parser = list::<CiType>)]
    pub ci_types: Option<List<CiType>>,
    #[arg(long, value_parser = list::<u8>)]
    pub rules: Option<List<u8>>,
}

/// Comma-separated flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T> From<List<T>> for Vec<T> {
    fn from(l: List<T>) -> Self {
        l.0
    }
}

impl<T> From<List<T>> for Option<Vec<T>> {
    fn from(l: List<T>) -> Self {
        Some(l.0)
    }
}

fn list<T: std::str::FromStr>(s: &str) -> Result<List<T>>
where
    T::Err: std::fmt::Display,
{
    parse_list(s).map(List)
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident => $target:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$target = v.into(); } )*
    };
}

impl RunArgs {
    /// Config file values overlaid by explicit flags, then resolved.
    pub fn into_config(self, command: CommandName) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let a = self;
        if let Some(p) = a.input_pos.clone().or(a.input.clone()) {
            cfg.input = Some(p);
        }
        overlay!(cfg, a,
            seed => seed, workers => workers, prior_sd => prior_sd, family => family,
            rope_level => rope_level, ci_level => ci_level, ci_type => ci_type, rule => rule,
            null_prior_sd => null_prior_sd, chains => chains, iters => iters, burnin => burnin,
            sizes => sample_sizes, adr_rates => adr_rates, beliefs => beliefs, families => families,
            background_rate => background_rate, rel_sd => rel_sd, reps => reps,
            rope_levels => rope_levels, ci_levels => ci_levels, ci_types => ci_types, rules => rules,
        );
        overlay!(cfg, a,
            prior => prior, horizon => horizon, means => means, censor => censor,
            expected_times => expected_times,
        );
        if a.require_ess {
            cfg.require_ess = true;
        }
        if a.paper_literal_lognormal {
            cfg.paper_literal_lognormal = true;
        }
        if a.no_controls {
            cfg.include_controls = false;
        }
        cfg.resolve(command)
    }
}
