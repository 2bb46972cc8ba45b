use bpgwsp_core::prior::{Belief, PriorFamily};
use bpgwsp_core::ropetest::{level_grid, Interval, IntervalTable, TestConfig};
use bpgwsp_core::simgen::{build_grid, GridConfig};
use bpgwsp_core::tune::{
    select_group, AggregateOptions, BeliefGroup, ConfigGrid, FitRecord, StratumFactor, TuningReport,
};

// Inside every null ROPE on the level grid.
const INSIDE: Interval = Interval { lo: 0.05, hi: 0.06 };
// Disjoint from every null ROPE on the level grid.
const OUTSIDE: Interval = Interval { lo: 50.0, hi: 60.0 };

fn table(ci: Interval) -> IntervalTable {
    let levels = level_grid();
    IntervalTable {
        intervals: vec![[[ci, ci], [ci, ci]]; levels.len()],
        levels,
    }
}

/// One record per (setting, rep) of a log-log-log grid; `signal_if` decides
/// whether the fit lands outside the ROPE.
fn records(reps: usize, signal_if: impl Fn(&FitRecord) -> bool) -> Vec<FitRecord> {
    let grid = build_grid(&GridConfig {
        families: vec![PriorFamily::LogLogLog],
        repetitions: reps,
        ..GridConfig::default()
    })
    .unwrap();
    let mut out = Vec::new();
    for s in &grid.settings {
        for rep in 0..reps {
            let mut r = FitRecord {
                setting_id: s.id,
                rep,
                truth: s.truth(),
                n: s.scenario.n,
                adr_rate: s.scenario.adr_rate,
                adr_proportion: s.scenario.adr_proportion(),
                expected_time: s.scenario.expected_time,
                true_quarter: s.scenario.true_quarter(),
                belief: s.belief,
                family: s.family,
                data_seed: 0,
                mcmc_seed: 0,
                events: 0,
                intervals: table(INSIDE),
                ess: [20_000.0, 20_000.0],
                rhat_max: 1.0,
                accept_rate: 0.3,
            };
            if signal_if(&r) {
                r.intervals = table(OUTSIDE);
            }
            out.push(r);
        }
    }
    out
}

fn report(records: &[FitRecord]) -> TuningReport {
    TuningReport::build(
        records,
        &ConfigGrid::default(),
        &TestConfig::recommended(),
        false,
        &AggregateOptions::default(),
    )
    .unwrap()
}

#[test]
fn perfect_detection_under_correct_beliefs() {
    let recs = records(2, |r| r.truth && r.belief_offset() == Some(0));
    let rep = report(&recs);
    let auc = |g| rep.group(g).unwrap().performance.auc.unwrap();
    assert_eq!(auc(BeliefGroup::Correct), 1.0);
    assert_eq!(auc(BeliefGroup::OneQuarterOff), 0.5);
    assert_eq!(auc(BeliefGroup::TwoQuartersOff), 0.5);
    assert_eq!(auc(BeliefGroup::NoneAssumed), 0.5);
    assert_eq!(rep.ranking[0].performance.auc, Some(1.0));
    for row in rep.stratified.iter().filter(|r| r.factor != StratumFactor::Family) {
        assert_eq!(row.performance.auc, Some(1.0), "{row:?}");
    }
    let levels = |f| rep.stratified.iter().filter(|r| r.factor == f).count();
    assert_eq!(levels(StratumFactor::N), 3);
    assert_eq!(levels(StratumFactor::AdrProportion), 2);
    assert_eq!(levels(StratumFactor::ExpectedTime), 3);
    assert_eq!(
        rep.stratum(StratumFactor::ExpectedTime, "183")
            .unwrap()
            .performance
            .positives,
        12
    );
}

#[test]
fn identical_decisions_across_beliefs_give_identical_rows() {
    let recs = records(1, |r| r.truth && r.n >= 3000);
    let rep = report(&recs);
    let aucs: Vec<f64> = rep.robustness.iter().map(|r| r.performance.auc.unwrap()).collect();
    assert!(aucs.iter().all(|a| *a == aucs[0]), "{aucs:?}");
    assert!((aucs[0] - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn ranking_is_a_permutation_of_the_grid() {
    let recs = records(1, |r| r.truth);
    let rep = report(&recs);
    let grid = ConfigGrid::default();
    assert_eq!(rep.ranking.len(), grid.configs().len());
    let mut labels: Vec<&str> = rep.ranking.iter().map(|r| r.label.as_str()).collect();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), grid.configs().len());
    assert_eq!(rep.diagonal.len(), 60);
    assert!(rep
        .ranking
        .windows(2)
        .all(|w| w[0].performance.auc >= w[1].performance.auc));
    assert!(rep.rank_of(&TestConfig::recommended()).is_some());
}

#[test]
fn missing_levels_are_listed_without_auc() {
    let recs = records(1, |r| r.truth);
    let grid = ConfigGrid {
        ci_levels: vec![0.8, 0.99],
        ..ConfigGrid::default()
    };
    let rep = TuningReport::build(
        &recs,
        &grid,
        &TestConfig::recommended(),
        false,
        &AggregateOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.ranking.len(), grid.configs().len());
    let missing: Vec<_> = rep.ranking.iter().filter(|r| r.performance.auc.is_none()).collect();
    assert_eq!(missing.len(), grid.configs().len() / 2);
    assert!(missing.iter().all(|r| r.config.ci_level == 0.99));
    assert!(rep.ranking.last().unwrap().performance.auc.is_none());
}

#[test]
fn offset_groups_pick_matching_controls() {
    let recs = records(1, |_| false);
    let two_off = select_group(&recs, BeliefGroup::TwoQuartersOff);
    let pos: Vec<_> = two_off.iter().filter(|r| r.truth).collect();
    assert!(pos.iter().all(|r| r.belief_offset() == Some(2)));
    // q1 analysed as q3 and q3 analysed as q1, over 3 n x 2 adr levels
    assert_eq!(pos.len(), 12);
    let control_beliefs: std::collections::BTreeSet<Belief> =
        two_off.iter().filter(|r| !r.truth).map(|r| r.belief).collect();
    assert_eq!(control_beliefs, [Belief::Q1, Belief::Q3].into());

    let correct = select_group(&recs, BeliefGroup::Correct);
    assert!(correct.iter().filter(|r| !r.truth).all(|r| r.belief == Belief::None));
    assert_eq!(correct.iter().filter(|r| r.truth).count(), 18);
}

#[test]
fn low_ess_records_can_be_excluded() {
    let mut recs = records(1, |r| r.truth && r.belief_offset() == Some(0));
    for r in recs.iter_mut().filter(|r| r.n == 500) {
        r.ess = [500.0, 500.0];
    }
    let kept = TuningReport::build(
        &recs,
        &ConfigGrid::single(TestConfig::recommended()),
        &TestConfig::recommended(),
        false,
        &AggregateOptions {
            require_ess: true,
            family: None,
        },
    )
    .unwrap();
    assert_eq!(kept.low_ess_records, recs.iter().filter(|r| r.n == 500).count());
    assert!(kept.stratum(StratumFactor::N, "500").is_none());
    let all = report(&recs);
    assert_eq!(all.stratum(StratumFactor::N, "500").unwrap().performance.low_ess, 7);
}
