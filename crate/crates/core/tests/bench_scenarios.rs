//! Harness-level checks on the grouped scenario presets.

use cbayes_core::bench::{run_benchmark, BenchConfig, EvalRule, ScenarioSpec};
use cbayes_core::conformal::DegeneratePolicy;
use cbayes_core::report::Method;

/// Homoscedastic grouped scenario: both CB and Bayes land near the target;
/// CB overall coverage within 3 se of 0.8 over 50 repeats.
#[test]
fn scenario1_cb_overall_coverage_on_target() {
    let spec = ScenarioSpec::preset("paper-hier-1").expect("preset");
    let cfg = BenchConfig {
        methods: vec![Method::Cb, Method::Bayes],
        alpha: 0.2,
        repeats: 50,
        t: 2000,
        tune: 3000,
        n_grid: 100,
        seed: 13,
        eval: EvalRule::Grid,
        workers: 2,
        degenerate_policy: DegeneratePolicy::FloorRank,
    };
    let report = run_benchmark(&spec, &cfg).expect("scenario 1 benchmark");
    let cb = report
        .rows
        .iter()
        .find(|r| r.method == Method::Cb && r.group.is_none())
        .unwrap();
    assert!(
        (cb.coverage.mean - 0.8).abs() <= 3.0 * cb.coverage.se,
        "CB overall coverage {:.3} (se {:.3}) misses 0.8",
        cb.coverage.mean,
        cb.coverage.se
    );
    // the well-specified Bayes model should not be flagged either
    let bayes = report
        .rows
        .iter()
        .find(|r| r.method == Method::Bayes && r.group.is_none())
        .unwrap();
    assert!(
        (bayes.coverage.mean - 0.8).abs() <= 4.0 * bayes.coverage.se,
        "Bayes overall coverage {:.3} (se {:.3}) far from 0.8 in the well-specified scenario",
        bayes.coverage.mean,
        bayes.coverage.se
    );
}
