use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bpgwsp_core::mcmc::{run_chains, McmcSettings};
use bpgwsp_core::prior::{Belief, Param, PriorFamily, PriorSpec};
use bpgwsp_core::ropetest::{run_test, MAX_RHAT, MIN_ESS};
use bpgwsp_core::simgen::{build_grid, generate_sample, GridConfig, ScenarioGrid, ScenarioSpec};
use bpgwsp_core::tune::{fit_setting, TuningReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CommandName, RunConfig};
use crate::io::{
    dataset_csv, read_dataset, read_json, write_atomic, write_json, DataSummary, Histogram, HISTOGRAM_BINS,
};
use crate::report::{ranking_csv, render_decision, render_tuning, robustness_csv, stratified_csv, DecisionArtifact};
use crate::store::{RecordStore, StoreFingerprint};

/// Files written and messages produced by a command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: String,
}

impl Outcome {
    fn wrote(&mut self, path: PathBuf) {
        self.files.push(path);
    }
}

/// Runs the command recorded in `cfg`, writing every output under `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let command = cfg.command.context("configuration has no command")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("cannot start worker pool")?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let run_json = out.join("run.json");
    write_json(&run_json, cfg)?;
    let mut outcome = pool.install(|| match command {
        CommandName::Simulate => simulate(cfg, out),
        CommandName::Fit => fit(cfg, out),
        CommandName::Test => test(cfg, out),
        CommandName::Tune => tune(cfg, out).map(|(o, _)| o),
        CommandName::Report => report(cfg, out),
    })?;
    outcome.files.insert(0, run_json);
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub setting_id: usize,
    pub scenario_index: usize,
    pub rep: usize,
    pub belief: Belief,
    pub family: PriorFamily,
    pub truth: bool,
    pub data_seed: u64,
    pub mcmc_seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub grid: GridConfig,
    pub settings: usize,
    pub adr_settings: usize,
    pub control_settings: usize,
    pub repetitions: usize,
    pub scenarios: Vec<ScenarioSpec>,
    pub entries: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

fn data_file(scenario_index: usize, rep: usize) -> String {
    format!("data/scenario-{scenario_index:03}-rep-{rep:03}.csv")
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let grid = build_grid(&cfg.grid_config())?;
    let jobs: Vec<(usize, usize)> = (0..grid.scenarios.len())
        .flat_map(|s| (0..grid.repetitions).map(move |r| (s, r)))
        .collect();
    let results: Vec<(PathBuf, Vec<String>)> = jobs
        .par_iter()
        .map(|&(s, rep)| {
            let sample = generate_sample(&grid.scenarios[s], ScenarioGrid::data_seed(cfg.seed, s, rep))?;
            let path = out.join(data_file(s, rep));
            write_atomic(&path, dataset_csv(&sample.data).as_bytes())?;
            let warnings = sample
                .warnings
                .into_iter()
                .map(|w| format!("scenario {s} rep {rep}: {w}"))
                .collect();
            Ok((path, warnings))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(grid.len() * grid.repetitions);
    for s in &grid.settings {
        for rep in 0..grid.repetitions {
            entries.push(ManifestEntry {
                setting_id: s.id,
                scenario_index: s.scenario_index,
                rep,
                belief: s.belief,
                family: s.family,
                truth: s.truth(),
                data_seed: ScenarioGrid::data_seed(cfg.seed, s.scenario_index, rep),
                mcmc_seed: ScenarioGrid::mcmc_seed(cfg.seed, s.id, rep),
                file: data_file(s.scenario_index, rep),
            });
        }
    }
    let mut outcome = Outcome::default();
    let warnings: Vec<String> = results.iter().flat_map(|(_, w)| w.clone()).collect();
    let manifest = Manifest {
        master_seed: cfg.seed,
        settings: grid.len(),
        adr_settings: grid.adr_settings(),
        control_settings: grid.control_settings(),
        repetitions: grid.repetitions,
        scenarios: grid.scenarios.clone(),
        grid: grid.config.clone(),
        entries,
        warnings: warnings.clone(),
    };
    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    outcome.files.extend(results.into_iter().map(|(p, _)| p));
    outcome.wrote(manifest_path);
    outcome.warnings = warnings;
    outcome.summary = format!(
        "{} settings ({} ADR, {} control) x {} reps; {} datasets written",
        manifest.settings,
        manifest.adr_settings,
        manifest.control_settings,
        manifest.repetitions,
        grid.scenarios.len() * grid.repetitions
    );
    Ok(outcome)
}

/// Sidecar of a posterior draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub prior: PriorSpec,
    pub data: DataSummary,
    pub mcmc: McmcSettings,
    pub params: Vec<Param>,
    pub rows: usize,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    pub accept_rate: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub warnings: Vec<String>,
}

fn diagnostics_warnings(params: &[Param], ess: &[f64], rhat: &[f64]) -> Vec<String> {
    let mut w = Vec::new();
    for ((p, e), r) in params.iter().zip(ess).zip(rhat) {
        if *e < MIN_ESS {
            w.push(format!(
                "effective sample size of {p} is {e:.0}, below the recommended {MIN_ESS:.0}"
            ));
        }
        if *r > MAX_RHAT {
            w.push(format!("split R-hat of {p} is {r:.3}; chains may not have converged"));
        }
    }
    w
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let data = read_dataset(cfg.input_path()?, cfg.censor)?;
    let spec = cfg.prior_spec(data.censor_time())?;
    let mcmc = cfg.mcmc_settings();
    let start = Instant::now();
    let draws = run_chains(&data, &spec, &mcmc)?;
    eprintln!("fit: {} draws in {:.2}s", draws.rows(), start.elapsed().as_secs_f64());

    let mut csv = draws.params.iter().map(|p| p.name()).collect::<Vec<_>>().join(",");
    csv.push('\n');
    for i in 0..draws.rows() {
        let row: Vec<String> = draws.columns.iter().map(|c| c[i].to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let draws_path = out.join("draws.csv");
    write_atomic(&draws_path, csv.as_bytes())?;

    let warnings = diagnostics_warnings(&draws.params, &draws.ess, &draws.rhat);
    let artifact = FitArtifact {
        prior: spec,
        data: DataSummary::of(&data),
        mcmc,
        rows: draws.rows(),
        posterior_mean: draws.params.iter().filter_map(|p| draws.mean(*p)).collect(),
        posterior_sd: draws.params.iter().filter_map(|p| draws.sd(*p)).collect(),
        params: draws.params.clone(),
        ess: draws.ess.clone(),
        rhat: draws.rhat.clone(),
        accept_rate: draws.accept_rate.clone(),
        degenerate: draws.degenerate.clone(),
        warnings: warnings.clone(),
    };
    let side = out.join("draws.json");
    write_json(&side, &artifact)?;

    let mut outcome = Outcome {
        summary: render_fit(&artifact),
        warnings,
        ..Outcome::default()
    };
    outcome.wrote(draws_path);
    outcome.wrote(side);
    Ok(outcome)
}

pub fn render_fit(a: &FitArtifact) -> String {
    let mut s = format!(
        "{} draws from {} chains; {} records, {} events, censored at {}\n",
        a.rows, a.mcmc.chains, a.data.records, a.data.events, a.data.censor_time
    );
    for (i, p) in a.params.iter().enumerate() {
        s.push_str(&format!(
            "{p}: mean {:.5}, sd {:.5}, ESS {:.0}, split R-hat {:.4}\n",
            a.posterior_mean[i], a.posterior_sd[i], a.ess[i], a.rhat[i]
        ));
    }
    s
}

pub fn test(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let data = read_dataset(cfg.input_path()?, cfg.censor)?;
    let spec = cfg.prior_spec(data.censor_time())?;
    let null = cfg.null_spec()?;
    let config = cfg.test_config()?;
    let mcmc = cfg.mcmc_settings();
    let start = Instant::now();
    let (decision, _) = run_test(&data, &spec, &null, &mcmc, &config)?;
    eprintln!("test: decided in {:.2}s", start.elapsed().as_secs_f64());

    let artifact = DecisionArtifact {
        decision,
        prior: spec,
        data: DataSummary::of(&data),
        mcmc,
        histogram: Histogram::of_events(&data, HISTOGRAM_BINS),
    };
    let json = out.join("decision.json");
    write_json(&json, &artifact)?;
    let text = render_decision(&artifact);
    let txt = out.join("report.txt");
    write_atomic(&txt, text.as_bytes())?;
    let mut outcome = Outcome {
        warnings: artifact.decision.warnings.clone(),
        summary: text,
        ..Outcome::default()
    };
    outcome.wrote(json);
    outcome.wrote(txt);
    Ok(outcome)
}

/// Credibility levels each fit is summarised at.
fn fit_levels(cfg: &RunConfig) -> Vec<f64> {
    let mut levels = cfg.ci_levels.clone();
    levels.push(cfg.ci_level);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

pub fn tune(cfg: &RunConfig, out: &Path) -> Result<(Outcome, TuningReport)> {
    let grid = build_grid(&cfg.grid_config())?;
    let config_grid = cfg.config_grid()?;
    let focus = cfg.test_config()?;
    let mcmc = cfg.mcmc_settings();
    let levels = fit_levels(cfg);
    let fingerprint = StoreFingerprint {
        seed: cfg.seed,
        grid: grid.config.clone(),
        chains: cfg.chains,
        iters: cfg.iters,
        burnin: cfg.burnin,
        levels: levels.clone(),
    };
    let (store, mut done) = RecordStore::open(out, &fingerprint)?;
    let pending: Vec<(usize, usize)> = grid
        .settings
        .iter()
        .flat_map(|s| (0..grid.repetitions).map(move |r| (s.id, r)))
        .filter(|k| !done.contains_key(k))
        .collect();
    let total = grid.len() * grid.repetitions;
    eprintln!(
        "tune: {total} fits, {} already stored, {} to run",
        total - pending.len(),
        pending.len()
    );

    let start = Instant::now();
    let finished = AtomicUsize::new(0);
    let step = (pending.len() / 20).max(1);
    let fresh = pending
        .par_iter()
        .map(|&(id, rep)| {
            let record = fit_setting(&grid, &grid.settings[id], rep, cfg.seed, &mcmc, &levels)
                .with_context(|| format!("setting {id} rep {rep}"))?;
            store.append(&record)?;
            let n = finished.fetch_add(1, Ordering::Relaxed) + 1;
            if n.is_multiple_of(step) || n == pending.len() {
                eprintln!(
                    "tune: {n}/{} fits ({:.0}s)",
                    pending.len(),
                    start.elapsed().as_secs_f64()
                );
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    for r in fresh {
        done.insert(r.key(), r);
    }
    store.finalize(&done)?;

    let records: Vec<_> = done.into_values().collect();
    let report = TuningReport::build(
        &records,
        &config_grid,
        &focus,
        cfg.paper_literal_lognormal,
        &cfg.aggregate_options(),
    )?;
    let mut outcome = Outcome::default();
    outcome.wrote(out.join("records.jsonl"));
    outcome.files.extend(write_tuning_outputs(&report, out)?);
    if report.low_ess_records > 0 {
        outcome.warnings.push(format!(
            "{} of {} fits have a shape-parameter ESS below {MIN_ESS:.0}",
            report.low_ess_records, report.records
        ));
    }
    outcome.summary = render_tuning(&report, 10);
    Ok((outcome, report))
}

fn write_tuning_outputs(report: &TuningReport, out: &Path) -> Result<Vec<PathBuf>> {
    let files = [
        ("tuning.json", serde_json::to_vec_pretty(report)?),
        ("ranking.csv", ranking_csv(&report.ranking)?),
        ("ranking_equal_levels.csv", ranking_csv(&report.diagonal)?),
        ("stratified.csv", stratified_csv(report)?),
        ("robustness.csv", robustness_csv(report)?),
        ("report.txt", render_tuning(report, 10).into_bytes()),
    ];
    let mut paths = Vec::new();
    for (name, bytes) in files {
        let p = out.join(name);
        write_atomic(&p, &bytes)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Renders a decision, fit or tuning artifact as text.
pub fn render_artifact(path: &Path) -> Result<String> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("decision").is_some() {
        let a: DecisionArtifact =
            serde_json::from_value(value).with_context(|| format!("{} is not a decision artifact", path.display()))?;
        Ok(render_decision(&a))
    } else if value.get("ranking").is_some() {
        let r: TuningReport =
            serde_json::from_value(value).with_context(|| format!("{} is not a tuning report", path.display()))?;
        Ok(render_tuning(&r, 10))
    } else if value.get("posterior_mean").is_some() {
        let a: FitArtifact =
            serde_json::from_value(value).with_context(|| format!("{} is not a fit sidecar", path.display()))?;
        Ok(render_fit(&a))
    } else {
        bail!("{}: unrecognised artifact", path.display())
    }
}

pub fn report(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let text = render_artifact(cfg.input_path()?)?;
    let txt = out.join("report.txt");
    write_atomic(&txt, text.as_bytes())?;
    let mut outcome = Outcome {
        summary: text,
        ..Outcome::default()
    };
    outcome.wrote(txt);
    Ok(outcome)
}
