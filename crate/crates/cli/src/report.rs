use std::fmt::Write as _;

use anyhow::Result;
use bpgwsp_core::mcmc::McmcSettings;
use bpgwsp_core::prior::{ParamFamily, PriorSpec};
use bpgwsp_core::ropetest::TestDecision;
use bpgwsp_core::tune::{Performance, RankedConfig, TuningReport};
use serde::{Deserialize, Serialize};

use crate::io::{DataSummary, Histogram};

/// Everything `test` records about one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionArtifact {
    pub decision: TestDecision,
    pub prior: PriorSpec,
    pub data: DataSummary,
    pub mcmc: McmcSettings,
    pub histogram: Histogram,
}

fn verdict(signal: bool) -> &'static str {
    if signal {
        "signal"
    } else {
        "no signal"
    }
}

fn describe_prior(spec: &PriorSpec) -> String {
    let entry = |name: &str, p: &bpgwsp_core::prior::ParamPrior| match p.family {
        ParamFamily::Fixed => format!("{name} fixed at {}", p.mean),
        ParamFamily::Lognormal => format!("{name} ~ lognormal(mean {}, sd {})", p.mean, p.sd),
        ParamFamily::Gamma => format!("{name} ~ gamma(mean {}, sd {})", p.mean, p.sd),
    };
    format!(
        "{}; {}; {}",
        entry("theta", &spec.theta),
        entry("nu", &spec.nu),
        entry("gamma", &spec.gamma)
    )
}

pub fn render_decision(a: &DecisionArtifact) -> String {
    let d = &a.decision;
    let mut s = String::new();
    let _ = writeln!(s, "decision: {}", verdict(d.signal));
    let _ = writeln!(
        s,
        "configuration: {}{}",
        d.config.label(),
        if d.recommended { " (recommended)" } else { "" }
    );
    let _ = writeln!(
        s,
        "data: {} records, {} events, censored at {}",
        a.data.records, a.data.events, a.data.censor_time
    );
    if let Some(m) = a.data.mean_event_time {
        let _ = writeln!(s, "mean event time: {m:.3}");
    }
    let _ = writeln!(s, "prior: {}", describe_prior(&a.prior));
    let _ = writeln!(
        s,
        "mcmc: {} chains x {} draws after {} burn-in, seed {}",
        a.mcmc.chains, a.mcmc.iters_per_chain, a.mcmc.burn_in, a.mcmc.seed
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<8} {:<28} {:<28} outcome", "param", "ROPE", "CI");
    let _ = writeln!(
        s,
        "{:<8} {:<28} {:<28} {}",
        "nu",
        d.rope_nu.to_string(),
        d.ci_nu.to_string(),
        d.outcome_nu
    );
    let _ = writeln!(
        s,
        "{:<8} {:<28} {:<28} {}",
        "gamma",
        d.rope_gamma.to_string(),
        d.ci_gamma.to_string(),
        d.outcome_gamma
    );
    let _ = writeln!(s);
    let diag = &d.diagnostics;
    for (i, p) in diag.params.iter().enumerate() {
        let _ = writeln!(s, "{p}: ESS {:.0}, split R-hat {:.4}", diag.ess[i], diag.rhat[i]);
    }
    let rates: Vec<String> = diag.accept_rate.iter().map(|r| format!("{r:.3}")).collect();
    let _ = writeln!(s, "acceptance rate per chain: {}", rates.join(", "));
    for w in &d.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "event-time histogram ({} bins over (0, {}]):",
        a.histogram.counts.len(),
        a.data.censor_time
    );
    let max = a.histogram.counts.iter().copied().max().unwrap_or(0).max(1);
    for (i, c) in a.histogram.counts.iter().enumerate() {
        let bar = "#".repeat((40 * c).div_ceil(max));
        let _ = writeln!(
            s,
            "  ({:>9.2}, {:>9.2}] {:>7} {bar}",
            a.histogram.edges[i],
            a.histogram.edges[i + 1],
            c
        );
    }
    s
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"))
}

fn perf_cols(p: &Performance) -> String {
    format!(
        "{:>6} {:>6} {:>6} {:>5} {:>5}",
        fmt_opt(p.auc),
        fmt_opt(p.sensitivity),
        fmt_opt(p.specificity),
        p.positives,
        p.negatives
    )
}

fn ranking_table(s: &mut String, rows: &[RankedConfig], top: usize) {
    let _ = writeln!(
        s,
        "{:>4}  {:<28} {:>6} {:>6} {:>6} {:>5} {:>5}",
        "rank", "configuration", "AUC", "sens", "spec", "pos", "neg"
    );
    for r in rows.iter().take(top) {
        let mark = if r.recommended { " *" } else { "" };
        let _ = writeln!(s, "{:>4}  {:<28} {}{mark}", r.rank, r.label, perf_cols(&r.performance));
    }
}

pub fn render_tuning(report: &TuningReport, top: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "fits: {} ({} below the recommended ESS{})",
        report.records,
        report.low_ess_records,
        if report.options.require_ess {
            ", excluded"
        } else {
            ", retained"
        }
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "ranking by AUC, correct prior belief (top {top} of {}):",
        report.ranking.len()
    );
    ranking_table(&mut s, &report.ranking, top);
    let _ = writeln!(s);
    let _ = writeln!(s, "equal ROPE and CI levels (top {top} of {}):", report.diagonal.len());
    ranking_table(&mut s, &report.diagonal, top);
    let _ = writeln!(s);
    let _ = writeln!(s, "by scenario factor, {}:", report.focus.label());
    let _ = writeln!(
        s,
        "{:<16} {:<12} {:>6} {:>6} {:>6} {:>5} {:>5}",
        "factor", "level", "AUC", "sens", "spec", "pos", "neg"
    );
    for r in &report.stratified {
        let _ = writeln!(
            s,
            "{:<16} {:<12} {}",
            r.factor.as_str(),
            r.level,
            perf_cols(&r.performance)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "by prior belief, {}:", report.focus.label());
    let _ = writeln!(
        s,
        "{:<29} {:>6} {:>6} {:>6} {:>5} {:>5}",
        "belief", "AUC", "sens", "spec", "pos", "neg"
    );
    for r in &report.robustness {
        let _ = writeln!(s, "{:<29} {}", r.group.as_str(), perf_cols(&r.performance));
    }
    s
}

#[derive(Serialize)]
struct RankingCsvRow<'a> {
    rank: usize,
    label: &'a str,
    rope_level: f64,
    ci_level: f64,
    ci_type: String,
    rule: u8,
    recommended: bool,
    auc: Option<f64>,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
    positives: usize,
    negatives: usize,
    low_ess: usize,
}

pub fn ranking_csv(rows: &[RankedConfig]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(RankingCsvRow {
            rank: r.rank,
            label: &r.label,
            rope_level: r.config.rope_level,
            ci_level: r.config.ci_level,
            ci_type: r.config.ci_type.to_string(),
            rule: r.config.combination_rule.number(),
            recommended: r.recommended,
            auc: r.performance.auc,
            sensitivity: r.performance.sensitivity,
            specificity: r.performance.specificity,
            positives: r.performance.positives,
            negatives: r.performance.negatives,
            low_ess: r.performance.low_ess,
        })?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize)]
struct GroupCsvRow<'a> {
    factor: &'a str,
    level: &'a str,
    auc: Option<f64>,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
    positives: usize,
    negatives: usize,
    low_ess: usize,
}

impl<'a> GroupCsvRow<'a> {
    fn new(factor: &'a str, level: &'a str, p: &Performance) -> Self {
        GroupCsvRow {
            factor,
            level,
            auc: p.auc,
            sensitivity: p.sensitivity,
            specificity: p.specificity,
            positives: p.positives,
            negatives: p.negatives,
            low_ess: p.low_ess,
        }
    }
}

pub fn stratified_csv(report: &TuningReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.stratified {
        w.serialize(GroupCsvRow::new(r.factor.as_str(), &r.level, &r.performance))?;
    }
    Ok(w.into_inner()?)
}

pub fn robustness_csv(report: &TuningReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.robustness {
        w.serialize(GroupCsvRow::new("belief", r.group.as_str(), &r.performance))?;
    }
    Ok(w.into_inner()?)
}
