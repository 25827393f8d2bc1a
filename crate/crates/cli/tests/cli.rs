use std::process::Command;

use interlace_cli::config::{Experiment, ExperimentConfig, MethodChoice, TargetSpec};
use interlace_cli::experiments::{RunOptions, run_experiment};
use interlace_cli::report::{CSV_HEADER, Format, emit_report, render};
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_interlace"))
}

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        prop::sample::select(Experiment::ALL.to_vec()),
        3usize..=5,
        prop::collection::vec(0.0f64..4.0, 0..3),
        prop::collection::vec(10u32..40, 1..4),
        1u64..1_000_000,
        any::<u64>(),
        prop::sample::select(vec![MethodChoice::Auto, MethodChoice::Exact, MethodChoice::Truncate]),
        (1e-6f64..0.5, prop::option::of(1u32..100), prop::option::of(0u32..3)),
    )
        .prop_map(|(experiment, d, u, n, trials, seed, method, (epsilon, table_radius, target))| ExperimentConfig {
            experiment,
            d,
            u,
            n,
            trials,
            seed,
            method,
            epsilon,
            table_radius,
            target: target.filter(|_| experiment != Experiment::ConditionalLaw).map(TargetSpec::Box),
            pair: Some(vec![2; d]),
            ..ExperimentConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn emitted_config_reparses_to_itself(cfg in config_strategy()) {
        let text = cfg.emit();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.emit(), text);
    }
}

#[test]
fn validate_laws_on_a_single_site_reports_finite_z_scores() {
    let cfg = ExperimentConfig::parse("experiment=validate-laws\nd=3\nu=1\ntrials=2000\nseed=3").unwrap();
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let z: Vec<f64> = out.record.metrics.iter().filter(|m| m.name.ends_with(".z")).map(|m| m.value).collect();
    assert_eq!(z.len(), 3);
    assert!(z.iter().all(|z| z.is_finite()));
    assert!(out.checks.iter().all(|c| c.passed), "{:?}", out.checks);
}

#[test]
fn records_do_not_depend_on_worker_count() {
    let cfg = ExperimentConfig::parse("experiment=conditional-law\nd=3\nu=1\ntrials=3000\nbucket_floor=100\nseed=11").unwrap();
    let one = run_experiment(&cfg, &RunOptions { workers: 1, record_timing: false }).unwrap().record;
    let eight = run_experiment(&cfg, &RunOptions { workers: 8, record_timing: false }).unwrap().record;
    assert_eq!(render(&one, Format::Csv), render(&eight, Format::Csv));
    assert_eq!(render(&one, Format::JsonLines), render(&eight, Format::JsonLines));
}

#[test]
fn reports_reemit_identically_and_match_metric_count() {
    let cfg = ExperimentConfig::parse("experiment=torus\ntorus_side=8\nu=0.5,1\ntrials=10\nseed=2").unwrap();
    let rec = run_experiment(&cfg, &RunOptions::default()).unwrap().record;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    emit_report(&rec, Format::JsonLines, &a).unwrap();
    emit_report(&rec, Format::JsonLines, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), rec.metrics.len());
    let csv = String::from_utf8(render(&rec, Format::Csv)).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert!(emit_report(&rec, Format::Csv, &dir.path().join("missing/x.csv")).is_err());
}

#[test]
fn timing_is_recorded_only_on_request() {
    let cfg = ExperimentConfig::parse("experiment=torus\ntorus_side=16\ntrials=3").unwrap();
    let plain = run_experiment(&cfg, &RunOptions::default()).unwrap().record;
    assert_eq!(plain.wall_ms, 0);
    assert_eq!(plain.config_hash, interlace_cli::report::config_hash(&cfg.emit()));
}

#[test]
fn tail_estimates_are_nested() {
    let cfg = ExperimentConfig::parse("experiment=tail\nu=3\nn=1,2,4\nM=10\ntrials=300\nseed=4").unwrap();
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(out.passed(), "{:?}", out.checks);
    let diam: Vec<f64> = [1, 2, 4].iter().map(|n| out.record.metric(&format!("cluster-diameter-tail[n={n},M=10,u=3]")).unwrap().value).collect();
    assert!(diam.windows(2).all(|w| w[1] <= w[0]));
    assert!(diam[0] > 0.0);
}

#[test]
fn invalid_config_exits_with_one() {
    let out = bin().args(["validate", "--set", "d=2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension must be ≥ 3"));
}

#[test]
fn failed_check_exits_with_two() {
    let args = ["torus", "--set", "torus_side=8", "--set", "trials=3", "--set", "rel_tol=1e-9", "--check"];
    let out = bin().args(args).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(&args[..args.len() - 1]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(CSV_HEADER));
}

#[test]
fn green_subcommand_prints_the_neighbour_value() {
    let out = bin().args(["green", "--site", "1,0,0", "--format", "jsonl"]).output().unwrap();
    assert!(out.status.success());
    let line: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((line["value"].as_f64().unwrap() - 0.516386).abs() < 1e-6);
}

#[test]
fn cap_and_sample_subcommands_write_outputs() {
    let out = bin().args(["cap", "--sites", "0,0,0;1,0,0"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("cap,capacity,0.98387")), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.csv");
    let out = bin().args(["sample", "--set", "window_radius=3", "--seed", "9", "--out"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let field = interlace::sampler::OccupancyField::read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(field.window().radius, 3);
    assert_eq!(field.seed(), Some(9));
}
