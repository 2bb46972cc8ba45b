//! Evaluation of test configurations over a simulation grid.
//!
//! Each `(setting, repetition)` fit is reduced to a [`FitRecord`] holding the
//! ETI and HDI of both shape parameters at every level of the tuning grid.
//! Decisions for any configuration follow from a record without refitting,
//! so ranking all configurations costs one posterior per record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::mcmc::{run_chains, McmcSettings};
use crate::prior::{Belief, Param, PriorFamily, PriorSpec};
use crate::ropetest::{
    combine, level_grid, shape_ropes, single_outcome, CiType, CombinationRule, Interval, IntervalTable, TestConfig,
    MIN_ESS,
};
use crate::simgen::{generate_sample, ScenarioGrid, Setting};

/// Posterior summary of one fit, sufficient to decide every configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub setting_id: usize,
    pub rep: usize,
    pub truth: bool,
    pub n: usize,
    pub adr_rate: f64,
    pub adr_proportion: f64,
    pub expected_time: Option<f64>,
    pub true_quarter: Option<u8>,
    pub belief: Belief,
    pub family: PriorFamily,
    pub data_seed: u64,
    pub mcmc_seed: u64,
    pub events: usize,
    pub intervals: IntervalTable,
    /// Effective sample sizes of `ν` and `γ`.
    pub ess: [f64; 2],
    pub rhat_max: f64,
    pub accept_rate: f64,
}

impl FitRecord {
    pub fn key(&self) -> (usize, usize) {
        (self.setting_id, self.rep)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess[0].min(self.ess[1])
    }

    pub fn belief_offset(&self) -> Option<u8> {
        Some(self.belief.quarter()?.abs_diff(self.true_quarter?))
    }
}

/// Simulates the cohort of `(setting, rep)`, fits it and summarises the
/// posterior at the given credibility levels.
pub fn fit_setting(
    grid: &ScenarioGrid,
    setting: &Setting,
    rep: usize,
    master_seed: u64,
    mcmc: &McmcSettings,
    levels: &[f64],
) -> Result<FitRecord> {
    let data_seed = ScenarioGrid::data_seed(master_seed, setting.scenario_index, rep);
    let mcmc_seed = ScenarioGrid::mcmc_seed(master_seed, setting.id, rep);
    let sample = generate_sample(&setting.scenario, data_seed)?;
    let spec = setting.prior_spec(grid.config.prior_sd, grid.config.paper_literal_lognormal)?;
    let settings = McmcSettings {
        seed: mcmc_seed,
        ..*mcmc
    };
    let draws = run_chains(&sample.data, &spec, &settings)?;
    let ess = [
        draws.ess_of(Param::Nu).unwrap_or(0.0),
        draws.ess_of(Param::Gamma).unwrap_or(0.0),
    ];
    Ok(FitRecord {
        setting_id: setting.id,
        rep,
        truth: setting.truth(),
        n: setting.scenario.n,
        adr_rate: setting.scenario.adr_rate,
        adr_proportion: setting.scenario.adr_proportion(),
        expected_time: setting.scenario.expected_time.filter(|_| setting.truth()),
        true_quarter: setting.scenario.true_quarter(),
        belief: setting.belief,
        family: setting.family,
        data_seed,
        mcmc_seed,
        events: sample.data.event_count(),
        intervals: IntervalTable::from_draws(&draws, levels)?,
        ess,
        rhat_max: draws.rhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        accept_rate: draws.accept_rate.iter().sum::<f64>() / draws.accept_rate.len() as f64,
    })
}

/// Labeled decision of one configuration on one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub setting_id: usize,
    pub rep: usize,
    pub truth: bool,
    pub signal: bool,
    pub config: TestConfig,
    pub ess: [f64; 2],
    pub rhat: f64,
    pub low_ess: bool,
    pub weight: f64,
}

impl DecisionRecord {
    pub fn new(setting_id: usize, rep: usize, truth: bool, signal: bool, config: TestConfig) -> Self {
        DecisionRecord {
            setting_id,
            rep,
            truth,
            signal,
            config,
            ess: [f64::NAN; 2],
            rhat: f64::NAN,
            low_ess: false,
            weight: 1.0,
        }
    }
}

/// ROPEs per prior family and level, built from the null prior.
#[derive(Debug, Clone)]
pub struct RopeBook {
    ropes: BTreeMap<(PriorFamily, u32), (Interval, Interval)>,
}

fn level_key(level: f64) -> u32 {
    (level * 1e6).round() as u32
}

impl RopeBook {
    pub fn new(families: &[PriorFamily], levels: &[f64], null_prior_sd: f64, paper_literal: bool) -> Result<Self> {
        let mut ropes = BTreeMap::new();
        for &family in families {
            let null = PriorSpec::null(family, null_prior_sd)?.with_paper_literal_lognormal(paper_literal);
            for &level in levels {
                ropes.insert((family, level_key(level)), shape_ropes(&null, level)?);
            }
        }
        Ok(RopeBook { ropes })
    }

    pub fn get(&self, family: PriorFamily, level: f64) -> Option<(Interval, Interval)> {
        self.ropes.get(&(family, level_key(level))).copied()
    }
}

/// Applies `config` to a fit record; `None` when the record lacks the level.
pub fn decide(record: &FitRecord, config: &TestConfig, ropes: &RopeBook) -> Option<DecisionRecord> {
    let (rope_nu, rope_gamma) = ropes.get(record.family, config.rope_level)?;
    let (ci_nu, ci_gamma) = record.intervals.get(config.ci_level, config.ci_type)?;
    let signal = combine(
        single_outcome(&ci_nu, &rope_nu),
        single_outcome(&ci_gamma, &rope_gamma),
        config.combination_rule,
    );
    Some(DecisionRecord {
        setting_id: record.setting_id,
        rep: record.rep,
        truth: record.truth,
        signal,
        config: *config,
        ess: record.ess,
        rhat: record.rhat_max,
        low_ess: record.min_ess() < MIN_ESS,
        weight: 1.0,
    })
}

/// Weighted confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Confusion {
    pub fn sensitivity(&self) -> f64 {
        self.tp / (self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        self.tn / (self.tn + self.fp)
    }

    pub fn auc(&self) -> f64 {
        auc_one_threshold(self.sensitivity(), self.specificity())
    }
}

pub fn confusion(records: &[DecisionRecord]) -> Result<Confusion> {
    let mut c = Confusion::default();
    for r in records {
        match (r.truth, r.signal) {
            (true, true) => c.tp += r.weight,
            (true, false) => c.fn_ += r.weight,
            (false, true) => c.fp += r.weight,
            (false, false) => c.tn += r.weight,
        }
    }
    if c.tp + c.fn_ <= 0.0 || c.tn + c.fp <= 0.0 {
        return Err(Error::Undefined("AUC needs both positive and negative records".into()));
    }
    Ok(c)
}

/// Area under the ROC polygon through `(0,0)`, `(1−spec, sens)`, `(1,1)`.
pub fn auc_one_threshold(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity + specificity) / 2.0
}

/// Scales control weights so both classes carry equal total weight.
pub fn balance_classes(mut records: Vec<DecisionRecord>) -> Result<Vec<DecisionRecord>> {
    let pos: f64 = records.iter().filter(|r| r.truth).map(|r| r.weight).sum();
    let neg: f64 = records.iter().filter(|r| !r.truth).map(|r| r.weight).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::Undefined("class balancing needs both classes".into()));
    }
    let factor = pos / neg;
    for r in records.iter_mut().filter(|r| !r.truth) {
        r.weight *= factor;
    }
    Ok(records)
}

/// Balanced confusion of a set of decisions; `None` if a class is missing.
pub fn balanced_confusion(records: Vec<DecisionRecord>) -> Option<Confusion> {
    confusion(&balance_classes(records).ok()?).ok()
}

/// Subsets of the record store matching the robustness analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefGroup {
    /// ADR cohorts analysed under the belief matching their true quarter;
    /// controls analysed without a belief.
    Correct,
    OneQuarterOff,
    TwoQuartersOff,
    /// ADR cohorts and controls analysed without a belief.
    NoneAssumed,
}

impl BeliefGroup {
    pub const ALL: [BeliefGroup; 4] = [
        BeliefGroup::Correct,
        BeliefGroup::OneQuarterOff,
        BeliefGroup::TwoQuartersOff,
        BeliefGroup::NoneAssumed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BeliefGroup::Correct => "correct",
            BeliefGroup::OneQuarterOff => "one_quarter_off",
            BeliefGroup::TwoQuartersOff => "two_quarters_off",
            BeliefGroup::NoneAssumed => "none_assumed",
        }
    }
}

impl fmt::Display for BeliefGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Records belonging to a belief group.
///
/// For the offset groups the controls are those analysed under any belief
/// that occurs among the group's ADR records.
pub fn select_group(records: &[FitRecord], group: BeliefGroup) -> Vec<&FitRecord> {
    let positive = |r: &FitRecord| -> bool {
        match group {
            BeliefGroup::Correct => r.belief_offset() == Some(0),
            BeliefGroup::OneQuarterOff => r.belief_offset() == Some(1),
            BeliefGroup::TwoQuartersOff => r.belief_offset() == Some(2),
            BeliefGroup::NoneAssumed => r.belief == Belief::None,
        }
    };
    let pos: Vec<&FitRecord> = records.iter().filter(|r| r.truth && positive(r)).collect();
    let control_beliefs: BTreeSet<Belief> = match group {
        BeliefGroup::Correct | BeliefGroup::NoneAssumed => [Belief::None].into(),
        _ => pos.iter().map(|r| r.belief).collect(),
    };
    let neg = records
        .iter()
        .filter(|r| !r.truth && control_beliefs.contains(&r.belief));
    pos.into_iter().chain(neg).collect()
}

/// Aggregation filters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateOptions {
    /// Drop fits whose shape-parameter ESS is below the recommended minimum.
    pub require_ess: bool,
    /// Restrict to one prior family.
    pub family: Option<PriorFamily>,
}

impl AggregateOptions {
    fn keep(&self, r: &FitRecord) -> bool {
        (!self.require_ess || r.min_ess() >= MIN_ESS) && self.family.is_none_or(|f| r.family == f)
    }
}

/// Performance of one configuration on one record subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
    pub low_ess: usize,
}

pub fn evaluate(records: &[&FitRecord], config: &TestConfig, ropes: &RopeBook) -> Performance {
    let decisions: Vec<DecisionRecord> = records.iter().filter_map(|r| decide(r, config, ropes)).collect();
    let complete = decisions.len() == records.len();
    let positives = decisions.iter().filter(|d| d.truth).count();
    let negatives = decisions.len() - positives;
    let low_ess = decisions.iter().filter(|d| d.low_ess).count();
    let c = if complete { balanced_confusion(decisions) } else { None };
    Performance {
        auc: c.map(|c| c.auc()),
        sensitivity: c.map(|c| c.sensitivity()),
        specificity: c.map(|c| c.specificity()),
        positives,
        negatives,
        low_ess,
    }
}

/// Levels, interval types and rules spanned by the configuration search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigGrid {
    pub rope_levels: Vec<f64>,
    pub ci_levels: Vec<f64>,
    pub ci_types: Vec<CiType>,
    pub rules: Vec<CombinationRule>,
    pub null_prior_sd: f64,
}

impl Default for ConfigGrid {
    fn default() -> Self {
        ConfigGrid {
            rope_levels: level_grid(),
            ci_levels: level_grid(),
            ci_types: CiType::ALL.to_vec(),
            rules: CombinationRule::ALL.to_vec(),
            null_prior_sd: crate::prior::DEFAULT_PRIOR_SD,
        }
    }
}

impl ConfigGrid {
    pub fn single(config: TestConfig) -> Self {
        ConfigGrid {
            rope_levels: vec![config.rope_level],
            ci_levels: vec![config.ci_level],
            ci_types: vec![config.ci_type],
            rules: vec![config.combination_rule],
            null_prior_sd: config.null_prior_sd,
        }
    }

    pub fn configs(&self) -> Vec<TestConfig> {
        let mut out = Vec::new();
        for &rope_level in &self.rope_levels {
            for &ci_level in &self.ci_levels {
                for &ci_type in &self.ci_types {
                    for &combination_rule in &self.rules {
                        out.push(TestConfig {
                            rope_level,
                            ci_level,
                            ci_type,
                            combination_rule,
                            null_prior_sd: self.null_prior_sd,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs().is_empty() {
            return arg("configuration grid is empty");
        }
        self.configs().iter().try_for_each(TestConfig::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    pub rank: usize,
    pub config: TestConfig,
    pub label: String,
    pub recommended: bool,
    #[serde(flatten)]
    pub performance: Performance,
}

fn tie_key(c: &TestConfig) -> (u32, u32, CiType, CombinationRule) {
    (
        level_key(c.rope_level),
        level_key(c.ci_level),
        c.ci_type,
        c.combination_rule,
    )
}

/// Every configuration of `grid` ranked by AUC on the correct-belief subset,
/// descending; configurations without an AUC go last.
pub fn rank_configs(
    records: &[FitRecord],
    grid: &ConfigGrid,
    ropes: &RopeBook,
    options: &AggregateOptions,
) -> Vec<RankedConfig> {
    let kept: Vec<FitRecord> = records.iter().filter(|r| options.keep(r)).cloned().collect();
    let subset = select_group(&kept, BeliefGroup::Correct);
    let mut rows: Vec<RankedConfig> = grid
        .configs()
        .into_iter()
        .map(|config| RankedConfig {
            rank: 0,
            label: config.label(),
            recommended: config.is_recommended(),
            performance: evaluate(&subset, &config, ropes),
            config,
        })
        .collect();
    rows.sort_by(|a, b| {
        let (x, y) = (a.performance.auc, b.performance.auc);
        match (x, y) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
        .then_with(|| tie_key(&a.config).cmp(&tie_key(&b.config)))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumFactor {
    N,
    AdrProportion,
    ExpectedTime,
    Family,
}

impl StratumFactor {
    pub const ALL: [StratumFactor; 4] = [
        StratumFactor::N,
        StratumFactor::AdrProportion,
        StratumFactor::ExpectedTime,
        StratumFactor::Family,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StratumFactor::N => "n",
            StratumFactor::AdrProportion => "adr_proportion",
            StratumFactor::ExpectedTime => "expected_time",
            StratumFactor::Family => "family",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub factor: StratumFactor,
    pub level: String,
    #[serde(flatten)]
    pub performance: Performance,
}

fn format_level(x: f64) -> String {
    let s = format!("{x:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// AUC per level of `factor` on the correct-belief subset.
///
/// Controls are matched on `n` and `family`; for the other factors, which
/// controls lack, every control joins every stratum.
pub fn stratified_auc(
    records: &[FitRecord],
    factor: StratumFactor,
    config: &TestConfig,
    ropes: &RopeBook,
    options: &AggregateOptions,
) -> Vec<StratumRow> {
    let kept: Vec<FitRecord> = records.iter().filter(|r| options.keep(r)).cloned().collect();
    let subset = select_group(&kept, BeliefGroup::Correct);
    let level_of = |r: &FitRecord| -> Option<String> {
        match factor {
            StratumFactor::N => Some(r.n.to_string()),
            StratumFactor::Family => Some(r.family.to_string()),
            StratumFactor::AdrProportion => r.truth.then(|| format_level(r.adr_proportion)),
            StratumFactor::ExpectedTime => r.expected_time.map(format_level),
        }
    };
    let mut levels: Vec<(f64, String)> = Vec::new();
    for r in subset.iter().filter(|r| r.truth) {
        let label = level_of(r).unwrap_or_default();
        if levels.iter().all(|(_, l)| *l != label) {
            let order = match factor {
                StratumFactor::N => r.n as f64,
                StratumFactor::AdrProportion => r.adr_proportion,
                StratumFactor::ExpectedTime => r.expected_time.unwrap_or_default(),
                StratumFactor::Family => r.family as u8 as f64,
            };
            levels.push((order, label));
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let matched_controls = matches!(factor, StratumFactor::N | StratumFactor::Family);
    levels
        .into_iter()
        .map(|(_, level)| {
            let members: Vec<&FitRecord> = subset
                .iter()
                .copied()
                .filter(|r| {
                    if r.truth || matched_controls {
                        level_of(r).as_deref() == Some(level.as_str())
                    } else {
                        true
                    }
                })
                .collect();
            StratumRow {
                factor,
                performance: evaluate(&members, config, ropes),
                level,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub group: BeliefGroup,
    #[serde(flatten)]
    pub performance: Performance,
}

/// AUC under correct, shifted and absent prior beliefs.
pub fn robustness_report(
    records: &[FitRecord],
    config: &TestConfig,
    ropes: &RopeBook,
    options: &AggregateOptions,
) -> Vec<RobustnessRow> {
    let kept: Vec<FitRecord> = records.iter().filter(|r| options.keep(r)).cloned().collect();
    BeliefGroup::ALL
        .iter()
        .map(|&group| RobustnessRow {
            group,
            performance: evaluate(&select_group(&kept, group), config, ropes),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub records: usize,
    pub low_ess_records: usize,
    pub options: AggregateOptions,
    pub ranking: Vec<RankedConfig>,
    /// Rows of `ranking` pairing equal ROPE and CI levels, in ranking order.
    pub diagonal: Vec<RankedConfig>,
    /// Configuration used for the stratified and robustness tables.
    pub focus: TestConfig,
    pub stratified: Vec<StratumRow>,
    pub robustness: Vec<RobustnessRow>,
}

impl TuningReport {
    pub fn build(
        records: &[FitRecord],
        grid: &ConfigGrid,
        focus: &TestConfig,
        paper_literal: bool,
        options: &AggregateOptions,
    ) -> Result<Self> {
        grid.validate()?;
        focus.validate()?;
        let families: BTreeSet<PriorFamily> = records.iter().map(|r| r.family).collect();
        let families: Vec<PriorFamily> = families.into_iter().collect();
        let mut levels = grid.rope_levels.clone();
        levels.push(focus.rope_level);
        let ropes = RopeBook::new(&families, &levels, grid.null_prior_sd, paper_literal)?;
        let focus_ropes = RopeBook::new(&families, &levels, focus.null_prior_sd, paper_literal)?;

        let ranking = rank_configs(records, grid, &ropes, options);
        let diagonal = ranking
            .iter()
            .filter(|r| level_key(r.config.rope_level) == level_key(r.config.ci_level))
            .cloned()
            .collect();
        let stratified = StratumFactor::ALL
            .iter()
            .flat_map(|f| stratified_auc(records, *f, focus, &focus_ropes, options))
            .collect();
        Ok(TuningReport {
            records: records.len(),
            low_ess_records: records.iter().filter(|r| r.min_ess() < MIN_ESS).count(),
            options: options.clone(),
            ranking,
            diagonal,
            focus: *focus,
            stratified,
            robustness: robustness_report(records, focus, &focus_ropes, options),
        })
    }

    pub fn rank_of(&self, config: &TestConfig) -> Option<usize> {
        self.ranking
            .iter()
            .find(|r| tie_key(&r.config) == tie_key(config))
            .map(|r| r.rank)
    }

    pub fn stratum(&self, factor: StratumFactor, level: &str) -> Option<&StratumRow> {
        self.stratified.iter().find(|r| r.factor == factor && r.level == level)
    }

    pub fn group(&self, group: BeliefGroup) -> Option<&RobustnessRow> {
        self.robustness.iter().find(|r| r.group == group)
    }
}
