//! Result rows, CSV / JSON-lines emission and the ground-truth report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Expect, OutputFormat, DEFAULT_TOLERANCE};

/// Floor for the ground truth in the relative-error denominator.
pub const EPSILON: f64 = 1e-15;

pub const CSV_HEADER: &str = "name,nbytes,algo,mean,stddev,samples,ground_truth,relative_error";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub name: String,
    pub nbytes: usize,
    pub algo: String,
    pub mean: f64,
    pub stddev: f64,
    pub samples: usize,
    pub ground_truth: f64,
    pub relative_error: f64,
    pub expect: Option<Expect>,
    pub tolerance: f64,
}

pub fn relative_error(mean: f64, ground_truth: f64) -> f64 {
    (mean - ground_truth).abs() / ground_truth.max(EPSILON)
}

impl ResultRow {
    pub fn new(name: &str, nbytes: usize, algo: &str, mean: f64, stddev: f64, samples: usize, ground_truth: f64) -> Self {
        Self {
            name: name.to_string(),
            nbytes,
            algo: algo.to_string(),
            mean,
            stddev,
            samples,
            ground_truth,
            relative_error: relative_error(mean, ground_truth),
            expect: None,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn passes(&self) -> bool {
        match self.expect {
            Some(Expect::BiasedLow) => self.mean < self.ground_truth,
            None => self.relative_error <= self.tolerance,
        }
    }
}

/// The serialized form of a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRow {
    pub name: String,
    pub nbytes: usize,
    pub algo: String,
    pub mean: f64,
    pub stddev: f64,
    pub samples: usize,
    pub ground_truth: f64,
    pub relative_error: f64,
}

/// Rounds to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

impl From<&ResultRow> for OutputRow {
    fn from(r: &ResultRow) -> Self {
        Self {
            name: r.name.clone(),
            nbytes: r.nbytes,
            algo: r.algo.clone(),
            mean: sig12(r.mean),
            stddev: sig12(r.stddev),
            samples: r.samples,
            ground_truth: sig12(r.ground_truth),
            relative_error: sig12(r.relative_error),
        }
    }
}

pub fn emit_results(rows: &[ResultRow], format: OutputFormat) -> String {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.11e},{:.11e},{},{:.11e},{:.11e}",
                    r.name, r.nbytes, r.algo, r.mean, r.stddev, r.samples, r.ground_truth, r.relative_error
                );
            }
        }
        OutputFormat::Jsonl => {
            for r in rows {
                let line = serde_json::to_string(&OutputRow::from(r)).expect("rows serialize");
                out.push_str(&line);
                out.push('\n');
            }
        }
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<OutputRow>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub passed: usize,
    pub failed: usize,
    /// Rows marked as expected bias demonstrations.
    pub expected: usize,
}

impl Report {
    /// True when every row without an `expect` marker passed.
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

pub fn ground_truth_report(rows: &[ResultRow]) -> Report {
    let mut text = String::new();
    let (mut passed, mut failed, mut expected) = (0, 0, 0);
    for r in rows {
        let verdict = if r.passes() { "PASS" } else { "FAIL" };
        let tag = match r.expect {
            Some(Expect::BiasedLow) => {
                expected += 1;
                " [expect biased_low]"
            }
            None if r.passes() => {
                passed += 1;
                ""
            }
            None => {
                failed += 1;
                ""
            }
        };
        let _ = writeln!(
            text,
            "{verdict} {} nbytes={} algo={} mean={:.6e} ground_truth={:.6e} relative_error={:.3e} tolerance={}{tag}",
            r.name, r.nbytes, r.algo, r.mean, r.ground_truth, r.relative_error, r.tolerance
        );
    }
    let _ = writeln!(text, "{passed} passed, {failed} failed, {expected} expected bias");
    Report {
        text,
        passed,
        failed,
        expected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(mean: f64, gt: f64) -> ResultRow {
        ResultRow::new("m", 8, "sk", mean, 0.0, 2, gt)
    }

    #[test]
    fn csv_header_and_row() {
        let text = emit_results(&[row(1.5e-6, 1.5e-6)], OutputFormat::Csv);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "m,8,sk,1.50000000000e-6,0.00000000000e0,2,1.50000000000e-6,0.00000000000e0");
    }

    #[test]
    fn zero_truth_uses_epsilon() {
        assert_eq!(relative_error(1e-15, 0.0), 1.0);
    }

    #[test]
    fn report_counts() {
        let mut low = row(1.0, 2.0);
        low.expect = Some(Expect::BiasedLow);
        let rep = ground_truth_report(&[row(1.0, 1.0), row(1.1, 1.0), low]);
        assert_eq!((rep.passed, rep.failed, rep.expected), (1, 1, 1));
        assert!(!rep.ok());
        assert!(rep.text.lines().nth(1).unwrap().starts_with("FAIL"));
    }

    #[test]
    fn expected_bias_does_not_fail_run() {
        let mut high = row(3.0, 2.0);
        high.expect = Some(Expect::BiasedLow);
        let rep = ground_truth_report(&[row(1.0, 1.0), high]);
        assert!(rep.ok());
        assert!(rep.text.lines().nth(1).unwrap().starts_with("FAIL"));
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(mean in 1e-9f64..1.0, sd in 0.0f64..1e-3, gt in 1e-9f64..1.0, n in 0usize..1<<20, k in 1usize..64) {
            let r = ResultRow::new("x-1", n, "get/global_loop", mean, sd, k, gt);
            let text = emit_results(&[r.clone()], OutputFormat::Jsonl);
            let back = parse_jsonl(&text).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0], &OutputRow::from(&r));
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            prop_assert!(rel(back[0].mean, mean) < 1e-11);
            prop_assert!(rel(back[0].ground_truth, gt) < 1e-11);
        }
    }
}
