use proptest::prelude::*;
use shmemlab::harness::{
    emit_results, ground_truth_report, parse_config, parse_jsonl, run_config, OutputFormat, ResultRow,
};

const DEMO: &str = include_str!("../../../configs/demo.conf");

const SMALL: &str = "\
[run]
npes = 4
seed = 7
max_reps = 4

[clock]
jitter = 30ns

[network.n]
o_s = 200ns
o_r = 200ns
L = 1us
g = 100ns
G = 1ns

[measurement.get]
op = blocking
kind = get
nbytes = 8, 1K
iters = 10
npes = 2

[measurement.sk]
op = bcast
algo = sk
nbytes = 8
iters = 8

[measurement.naive]
op = bcast
algo = naive
nbytes = 8
iters = 8
expect = biased_low
";

#[test]
fn empty_config_rejected() {
    let e = parse_config("").unwrap_err();
    assert!(e.to_string().contains("no measurements"), "{e}");
}

#[test]
fn duplicate_section_named() {
    let e = parse_config("[network.a]\nL = 1us\n[network.a]\nL = 2us\n").unwrap_err();
    assert!(e.to_string().contains("network.a"), "{e}");
    assert_eq!(e.line, Some(3));
}

#[test]
fn latency_units() {
    let cfg = parse_config("[network.n]\nL = 1us\n[measurement.q]\nop = quiet\n").unwrap();
    assert_eq!(cfg.network("n").unwrap().latency, 1e-6);
}

#[test]
fn demo_config_round_trips() {
    let cfg = parse_config(DEMO).unwrap();
    assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn small_config_report() {
    let cfg = parse_config(SMALL).unwrap();
    let rows = run_config(&cfg).unwrap();
    let names: Vec<_> = rows.iter().map(|r| (r.name.as_str(), r.nbytes)).collect();
    assert_eq!(names, [("get", 8), ("get", 1024), ("sk", 8), ("naive", 8)]);
    let rep = ground_truth_report(&rows);
    assert_eq!((rep.passed, rep.failed, rep.expected), (3, 0, 1));
    assert!(rep.ok());
    let naive = &rows[3];
    assert!(naive.mean < naive.ground_truth && naive.passes());
    assert!(rows[2].relative_error <= 0.02);
}

#[test]
fn same_seed_same_csv() {
    let cfg = parse_config(SMALL).unwrap();
    let a = emit_results(&run_config(&cfg).unwrap(), OutputFormat::Csv);
    let b = emit_results(&run_config(&cfg).unwrap(), OutputFormat::Csv);
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.run.seed = 8;
    let c = emit_results(&run_config(&other).unwrap(), OutputFormat::Csv);
    assert_ne!(a, c);
}

#[test]
fn failing_tolerance_reported() {
    let mut row = ResultRow::new("x", 8, "sk", 1.1, 0.0, 2, 1.0);
    row.tolerance = 0.05;
    let rep = ground_truth_report(&[row.clone()]);
    assert!(!rep.ok());
    assert!(rep.text.starts_with("FAIL x"), "{}", rep.text);
    row.tolerance = 0.2;
    assert!(ground_truth_report(&[row]).ok());
}

#[test]
fn csv_header_and_rows() {
    let rows = [ResultRow::new("a", 1, "global_loop", 1.5e-6, 0.0, 2, 1.5e-6)];
    let text = emit_results(&rows, OutputFormat::Csv);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "name,nbytes,algo,mean,stddev,samples,ground_truth,relative_error");
    assert_eq!(lines[1], "a,1,global_loop,1.50000000000e-6,0.00000000000e0,2,1.50000000000e-6,0.00000000000e0");
    assert_eq!(lines.len(), 2);
}

proptest! {
    #[test]
    fn jsonl_keeps_twelve_digits(mean in 1e-9f64..1.0, gt in 1e-9f64..1.0, sd in 0.0f64..1e-3) {
        let rows = [ResultRow::new("m", 64, "sk", mean, sd, 3, gt)];
        let back = parse_jsonl(&emit_results(&rows, OutputFormat::Jsonl)).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert!((back[0].mean - mean).abs() <= mean * 1e-11);
        prop_assert!((back[0].ground_truth - gt).abs() <= gt * 1e-11);
        prop_assert_eq!(back[0].samples, 3);
    }
}
