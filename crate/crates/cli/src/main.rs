use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use shmemlab::harness::{emit_results, ground_truth_report, parse_config, run_config, OutputFormat};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

/// Runs the measurements of a configuration file against the simulated
/// runtime and compares each result with the simulator's ground truth.
#[derive(Debug, Parser)]
#[command(name = "shmemlab", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Write results here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the ground-truth comparison to stderr.
    #[arg(long)]
    report: bool,
    /// List the configured measurements and exit.
    #[arg(long)]
    list: bool,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEADLOCK: u8 = 3;

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    match args.format {
        Some(Format::Csv) => cfg.run.format = OutputFormat::Csv,
        Some(Format::Jsonl) => cfg.run.format = OutputFormat::Jsonl,
        None => {}
    }
    if args.list {
        for m in &cfg.measurements {
            let sizes: Vec<String> = m.nbytes.iter().map(usize::to_string).collect();
            println!(
                "{}\t{}\t{}\tnpes={}\tnbytes={}",
                m.name,
                m.op.name(),
                m.label(),
                cfg.npes_of(m),
                sizes.join(",")
            );
        }
        return ExitCode::SUCCESS;
    }
    let rows = match run_config(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_deadlock() { EXIT_DEADLOCK } else { EXIT_CONFIG });
        }
    };
    let text = emit_results(&rows, cfg.run.format);
    match &args.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG);
            }
        }
        None => print!("{text}"),
    }
    let report = ground_truth_report(&rows);
    if args.report {
        eprint!("{}", report.text);
    }
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
