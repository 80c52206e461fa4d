use std::time::Duration;

use insitu::crash_bench::harness::{
    categories_recovered, measure_overhead, microbench, restore_experiment, run_clean, run_scenario,
    run_scenario_within,
};
use insitu::crash_bench::scenarios::{all, find, toy_loop, Category};
use insitu::crash_bench::{summarize, table, Mode, Outcome};

fn outcome(name: &str, mode: Mode) -> Outcome {
    run_scenario(&find(name).unwrap(), mode).unwrap().outcome
}

#[test]
fn pass_only_recovers_a_transient_fault() {
    assert_eq!(outcome("runtime-error-transfer", Mode::PassOnly), Outcome::Recovered);
}

#[test]
fn pass_only_cannot_fix_a_moved_path() {
    assert_eq!(outcome("path-problem-moved-dir", Mode::PassOnly), Outcome::Failed);
}

#[test]
fn surgery_guard_skips_single_class_shard() {
    let s = find("exceptional-data-single-class").unwrap();
    let r = run_scenario(&s, Mode::InSitu).unwrap();
    assert_eq!(r.outcome, Outcome::Recovered, "{}", r.detail);
    assert_eq!(r.crash_iteration, Some(149));
    assert!(r.restore_time_s.is_some());
}

#[test]
fn wiped_state_is_reported_failed() {
    let s = find("runtime-error-state-wiped").unwrap();
    assert!(!s.recoverable);
    let r = run_scenario(&s, Mode::InSitu).unwrap();
    assert_eq!(r.outcome, Outcome::Failed);
    assert!(r.detail.contains("KeyError"), "{}", r.detail);
    assert_eq!(run_scenario(&s, Mode::Restart).unwrap().outcome, Outcome::Recovered);
}

#[test]
fn workloads_are_deterministic_without_injection() {
    for s in all() {
        let a = run_clean(&s).unwrap();
        let b = run_clean(&s).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "{}", s.name);
    }
}

#[test]
fn in_situ_metric_equals_restart_metric() {
    for s in all().into_iter().filter(|s| s.recoverable) {
        let a = run_scenario(&s, Mode::InSitu).unwrap();
        let b = run_scenario(&s, Mode::Restart).unwrap();
        assert_eq!(a.outcome, Outcome::Recovered, "{}: {}", s.name, a.detail);
        assert_eq!(
            a.final_metric.map(f64::to_bits),
            b.final_metric.map(f64::to_bits),
            "{}",
            s.name
        );
        assert_eq!(a.crash_iteration, b.crash_iteration, "{}", s.name);
    }
}

#[test]
fn ablations_shrink_the_recoverable_set() {
    let scenarios = all();
    let recoverable: Vec<String> = scenarios
        .iter()
        .filter(|s| s.recoverable)
        .map(|s| s.name.clone())
        .collect();
    let mut reports = Vec::new();
    for s in &scenarios {
        for mode in [Mode::InSitu, Mode::PassOnly, Mode::NoFd] {
            reports.push(run_scenario(s, mode).unwrap());
        }
    }
    assert_eq!(
        categories_recovered(&reports, &recoverable, Mode::InSitu),
        Category::ALL.to_vec()
    );
    assert_eq!(
        categories_recovered(&reports, &recoverable, Mode::PassOnly),
        vec![Category::RuntimeError]
    );
    let no_fd = categories_recovered(&reports, &recoverable, Mode::NoFd);
    assert!(no_fd.len() < Category::ALL.len());
    assert!(!no_fd.contains(&Category::ExceptionalData));
    let text = table(&summarize(&reports));
    assert!(text.contains("in-situ: 14/15"), "{text}");
}

#[test]
fn summary_has_speedup_and_empty_input_renders_nothing() {
    assert_eq!(table(&summarize(&[])), "");
    let s = find("runtime-error-transfer").unwrap();
    let reports = vec![
        run_scenario(&s, Mode::Restart).unwrap(),
        run_scenario(&s, Mode::InSitu).unwrap(),
    ];
    let sum = summarize(&reports);
    let expected = reports[0].restore_time_s.unwrap() / reports[1].restore_time_s.unwrap();
    assert!((sum.speedup[&s.name] - expected).abs() < 1e-12);
    let json = serde_json::to_value(&sum).unwrap();
    assert_eq!(json["runs"][1]["mode"], "in-situ");
    assert_eq!(json["success"]["in-situ"]["runtime-error"], serde_json::json!([1, 1]));
}

#[test]
fn timeouts_are_failures() {
    let mut s = find("runtime-error-transfer").unwrap();
    s.workload = s.workload.replace("time.sleep(0)", "time.sleep(0.05)");
    let r = run_scenario_within(&s, Mode::InSitu, Duration::from_millis(50)).unwrap();
    assert_eq!(r.outcome, Outcome::Failed);
    assert!(r.detail.contains("timed out"));
}

#[test]
fn restore_time_tracks_crash_point_only_for_restart() {
    let points = restore_experiment(60, 0.01, &[10, 30, 50]).unwrap();
    let restart: Vec<f64> = points.iter().map(|p| p.restart.restore_time_s.unwrap()).collect();
    assert!(restart.windows(2).all(|w| w[0] < w[1]), "{restart:?}");
    for p in &points {
        assert_eq!(p.in_situ.outcome, Outcome::Recovered);
        assert_eq!(p.in_situ.crash_iteration, Some(p.crash_at));
        assert!(p.in_situ.restore_time_s.unwrap() < p.restart.restore_time_s.unwrap());
    }
}

#[test]
fn overhead_and_microbench_report_finite_figures() {
    let o = measure_overhead(&toy_loop(20), 2).unwrap();
    assert_eq!(o.fractions.len(), 2);
    assert!(o.overhead_fraction.is_finite());
    let m = microbench(2000, 2).unwrap();
    assert!(m.print_ns > 0.0);
    assert!(m.ratios().iter().all(|(_, r)| r.is_finite()));
}
