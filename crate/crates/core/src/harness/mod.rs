//! Config-driven benchmark runs.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, BenchConfig, ConfigError, MeasurementSpec, OutputFormat};
pub use output::{emit_results, ground_truth_report, parse_jsonl, Report, ResultRow};
pub use runner::{run_config, run_point, RunError};
