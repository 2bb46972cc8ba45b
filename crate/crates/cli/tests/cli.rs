//! Command-line behaviour of the `bpgwsp` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bpgwsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpgwsp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bpgwsp(args);
    assert!(
        out.status.success(),
        "bpgwsp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

/// One simulated N=5000 cohort with an early reaction (expected day 91).
fn early_cohort(root: &Path) -> PathBuf {
    let out = root.join("sim");
    ok(&[
        "simulate",
        "--sizes",
        "5000",
        "--adr-rates",
        "1",
        "--expected-times",
        "91",
        "--beliefs",
        "q1",
        "--families",
        "log-log-log",
        "--no-controls",
        "--reps",
        "1",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    out.join("data/scenario-000-rep-000.csv")
}

#[test]
fn simulate_default_grid_has_every_setting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    ok(&["simulate", "--reps", "1", "--sizes", "500", "--out", s(&out)]);
    let m = json(&out.join("manifest.json"));
    // three sizes would be 336; one size keeps the test quick
    assert_eq!(m["settings"], 112);
    assert_eq!(m["adr_settings"], 96);
    assert_eq!(m["control_settings"], 16);
    assert_eq!(m["entries"].as_array().unwrap().len(), 112);

    let full = dir.path().join("full");
    ok(&[
        "simulate",
        "--reps",
        "1",
        "--sizes",
        "500,3000,5000",
        "--adr-rates",
        "0.5",
        "--expected-times",
        "91",
        "--out",
        s(&full),
    ]);
    let m = json(&full.join("manifest.json"));
    assert_eq!(m["settings"], 3 * 16 + 3 * 16);
}

#[test]
fn simulate_default_grid_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    ok(&["simulate", "--reps", "1", "--out", s(&out)]);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["settings"], 336);
    assert_eq!(m["adr_settings"], 288);
    assert_eq!(m["control_settings"], 48);
    // 3 sizes x 2 rates x 3 times of ADR cohorts plus 3 control cohorts
    assert_eq!(csv_files(&out).len(), 21);
}

#[test]
fn simulate_single_scenario_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |o: &Path| {
        vec![
            "simulate".to_string(),
            "--sizes".into(),
            "500".into(),
            "--adr-rates".into(),
            "0.5".into(),
            "--expected-times".into(),
            "183".into(),
            "--no-controls".into(),
            "--reps".into(),
            "1".into(),
            "--seed".into(),
            "42".into(),
            "--out".into(),
            s(o).into(),
        ]
    };
    let av = args(&a);
    ok(&av.iter().map(String::as_str).collect::<Vec<_>>());
    let bv = args(&b);
    ok(&bv.iter().map(String::as_str).collect::<Vec<_>>());
    let files = csv_files(&a);
    assert_eq!(files.len(), 1);
    assert_eq!(
        fs::read(&files[0]).unwrap(),
        fs::read(b.join("data/scenario-000-rep-000.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

fn short_horizon_csv(dir: &Path) -> PathBuf {
    let mut body = String::from("time,event\n");
    for i in 1..=300 {
        let t = 21.0 * ((i * 37) % 300) as f64 / 300.0;
        if i % 4 == 0 || t == 0.0 {
            body.push_str("21,0\n");
        } else {
            body.push_str(&format!("{t},1\n"));
        }
    }
    let p = dir.join("short.csv");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn fit_uses_preset_for_inferred_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let data = short_horizon_csv(dir.path());
    let out = dir.path().join("fit");
    ok(&["fit", s(&data), "--prior", "q2", "--iters", "500", "--out", s(&out)]);
    let side = json(&out.join("draws.json"));
    assert_eq!(side["prior"]["theta"]["mean"], 3.0);
    assert_eq!(side["prior"]["nu"]["mean"], 3.0);
    assert_eq!(side["prior"]["gamma"]["mean"], 5.0);
    assert_eq!(side["data"]["censor_time"], 21.0);
    let draws = fs::read_to_string(out.join("draws.csv")).unwrap();
    assert_eq!(draws.lines().next(), Some("theta,nu,gamma"));
    assert_eq!(draws.lines().count(), 1 + 4 * 500);
}

#[test]
fn fit_with_fixed_scale_writes_two_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = short_horizon_csv(dir.path());
    let out = dir.path().join("fit");
    ok(&[
        "fit",
        s(&data),
        "--family",
        "fix-log-log",
        "--iters",
        "300",
        "--out",
        s(&out),
    ]);
    let draws = fs::read_to_string(out.join("draws.csv")).unwrap();
    assert_eq!(draws.lines().next(), Some("nu,gamma"));
}

#[test]
fn fit_rejects_empty_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "time,event\n").unwrap();
    let out = bpgwsp(&["fit", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "time,event\n3,1\n4,2\n").unwrap();
    let out = bpgwsp(&["fit", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3:"));

    let out = bpgwsp(&["fit", "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
}

#[test]
fn test_detects_early_reaction_under_matching_belief() {
    let dir = tempfile::tempdir().unwrap();
    let data = early_cohort(dir.path());
    let out = dir.path().join("t");
    let run = ok(&[
        "test",
        s(&data),
        "--prior",
        "q1",
        "--iters",
        "3000",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.starts_with("decision: signal\n"), "{stdout}");
    let d = json(&out.join("decision.json"));
    assert_eq!(d["decision"]["signal"], true);
    assert_eq!(
        fs::read_to_string(out.join("report.txt")).unwrap(),
        stdout.trim_end_matches('\n').to_string() + "\n"
    );
}

#[test]
fn custom_unit_means_equal_the_none_preset() {
    let dir = tempfile::tempdir().unwrap();
    let data = short_horizon_csv(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["test", s(&data), "--prior", "none", "--iters", "500", "--out", s(&a)]);
    ok(&[
        "test",
        s(&data),
        "--prior",
        "custom",
        "--means",
        "1,1,1",
        "--iters",
        "500",
        "--out",
        s(&b),
    ]);
    assert_eq!(
        fs::read(a.join("decision.json")).unwrap(),
        fs::read(b.join("decision.json")).unwrap()
    );

    let out = bpgwsp(&["test", s(&data), "--prior", "custom", "--out", s(&a)]);
    assert!(!out.status.success());
}

#[test]
fn warnings_do_not_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = short_horizon_csv(dir.path());
    let out = ok(&["test", s(&data), "--iters", "200", "--out", s(&dir.path().join("t"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

const TINY_TUNE: &[&str] = &[
    "tune",
    "--sizes",
    "500",
    "--adr-rates",
    "1",
    "--expected-times",
    "91",
    "--beliefs",
    "none,q1",
    "--families",
    "log-log-log",
    "--reps",
    "3",
    "--chains",
    "2",
    "--iters",
    "300",
    "--burnin",
    "100",
    "--rope-levels",
    "0.8",
    "--ci-levels",
    "0.8",
    "--ci-types",
    "hdi",
    "--rules",
    "2",
    "--seed",
    "5",
];

const TUNE_OUTPUTS: [&str; 7] = [
    "records.jsonl",
    "tuning.json",
    "ranking.csv",
    "ranking_equal_levels.csv",
    "stratified.csv",
    "robustness.csv",
    "report.txt",
];

fn tune_into(out: &Path) {
    let mut args = TINY_TUNE.to_vec();
    args.extend(["--out", s(out)]);
    ok(&args);
}

#[test]
fn tune_single_configuration_ranks_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tune");
    tune_into(&out);
    let ranking = fs::read_to_string(out.join("ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 2);
    assert!(ranking
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("1,rope0.80-hdi0.80-option2,"));
    assert_eq!(
        fs::read_to_string(out.join("records.jsonl")).unwrap().lines().count(),
        4 * 3
    );
}

#[test]
fn tune_resumes_after_interruption() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    tune_into(&whole);

    let cut = dir.path().join("cut");
    tune_into(&cut);
    let records = fs::read_to_string(cut.join("records.jsonl")).unwrap();
    let lines: Vec<&str> = records.lines().collect();
    let mut partial: String = lines[..lines.len() / 2].iter().map(|l| format!("{l}\n")).collect();
    partial.push_str(&lines[lines.len() / 2][..40]);
    fs::write(cut.join("records.jsonl"), partial).unwrap();
    for f in &TUNE_OUTPUTS[1..] {
        fs::remove_file(cut.join(f)).unwrap();
    }
    tune_into(&cut);
    for f in TUNE_OUTPUTS {
        assert_eq!(
            fs::read(whole.join(f)).unwrap(),
            fs::read(cut.join(f)).unwrap(),
            "{f} differs"
        );
    }

    // a different grid must not reuse the store
    let mut args = TINY_TUNE.to_vec();
    args.extend(["--out", s(&cut), "--reps", "4"]);
    assert!(!bpgwsp(&args).status.success());
}

#[test]
fn report_round_trips_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = short_horizon_csv(dir.path());

    let t = dir.path().join("t");
    ok(&["test", s(&data), "--iters", "300", "--out", s(&t)]);
    let r = dir.path().join("r1");
    ok(&["report", s(&t.join("decision.json")), "--out", s(&r)]);
    assert_eq!(
        fs::read(t.join("report.txt")).unwrap(),
        fs::read(r.join("report.txt")).unwrap()
    );

    let tune = dir.path().join("tune");
    tune_into(&tune);
    let r = dir.path().join("r2");
    ok(&["report", s(&tune.join("tuning.json")), "--out", s(&r)]);
    assert_eq!(
        fs::read(tune.join("report.txt")).unwrap(),
        fs::read(r.join("report.txt")).unwrap()
    );

    let f = dir.path().join("f");
    let fit_out = ok(&["fit", s(&data), "--iters", "300", "--out", s(&f)]);
    let r = dir.path().join("r3");
    ok(&["report", s(&f.join("draws.json")), "--out", s(&r)]);
    assert_eq!(
        String::from_utf8_lossy(&fit_out.stdout).trim_end(),
        fs::read_to_string(r.join("report.txt")).unwrap().trim_end()
    );

    let out = bpgwsp(&["report", s(&f.join("draws.csv")), "--out", s(&r)]);
    assert!(!out.status.success());
}

#[test]
fn recorded_config_replays_and_rejects_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = short_horizon_csv(dir.path());
    let a = dir.path().join("a");
    ok(&["test", s(&data), "--iters", "300", "--seed", "9", "--out", s(&a)]);
    let b = dir.path().join("b");
    ok(&["test", "--config", s(&a.join("run.json")), "--out", s(&b)]);
    for f in ["run.json", "decision.json", "report.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let out = bpgwsp(&["fit", "--config", s(&a.join("run.json")), "--out", s(&b)]);
    assert!(!out.status.success());
}
