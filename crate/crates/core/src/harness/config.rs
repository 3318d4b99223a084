//! Line-oriented `key = value` configuration with `[section]` headers.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::coll::BcastAlgo;
use crate::lockbench::{LockMode, LockScenario};
use crate::netmodel::{ClockModel, NetworkModel, ProgressMode, PutReturnPolicy};
use crate::p2p::{NbVariant, RmaKind, TimingStrategy};
use crate::sim::{BarrierAlgo, BcastTopology, PeId};
use crate::stats::{DEFAULT_MAX_REPS, DEFAULT_SIGMA_THRESHOLD};

pub const DEFAULT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

fn err<T>(line: impl Into<Option<usize>>, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line: line.into(),
        msg: msg.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "jsonl" | "json-lines" => Some(Self::Jsonl),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub npes: usize,
    pub seed: u64,
    pub format: OutputFormat,
    pub sigma_threshold: f64,
    pub max_reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            npes: 2,
            seed: 0,
            format: OutputFormat::Csv,
            sigma_threshold: DEFAULT_SIGMA_THRESHOLD,
            max_reps: DEFAULT_MAX_REPS,
        }
    }
}

/// Clock behaviour shared by every world. PE 0 is the reference clock;
/// `drift` and `offset * p` apply to PE `p`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClockPreset {
    pub drift: f64,
    pub offset: f64,
    pub timer_overhead: f64,
    pub jitter: f64,
}

impl ClockPreset {
    pub fn model(&self, npes: usize, jitter_seed: u64) -> ClockModel {
        let drift = (0..npes).map(|p| if p == 0 { 0.0 } else { self.drift }).collect();
        let offsets = (0..npes).map(|p| self.offset * p as f64).collect();
        ClockModel::perfect(npes)
            .with_drift(drift)
            .with_offsets(offsets)
            .with_timer_overhead(self.timer_overhead)
            .with_jitter(self.jitter, jitter_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpSel {
    Blocking,
    Nonblocking,
    Quiet,
    Bcast,
    Barrier,
    Lock,
}

impl OpSel {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "blocking" => Self::Blocking,
            "nonblocking" => Self::Nonblocking,
            "quiet" => Self::Quiet,
            "bcast" => Self::Bcast,
            "barrier" => Self::Barrier,
            "lock" => Self::Lock,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Blocking => "blocking",
            Self::Nonblocking => "nonblocking",
            Self::Quiet => "quiet",
            Self::Bcast => "bcast",
            Self::Barrier => "barrier",
            Self::Lock => "lock",
        }
    }

    fn sized(self) -> bool {
        matches!(self, Self::Blocking | Self::Nonblocking | Self::Bcast)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    BiasedLow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSpec {
    pub name: String,
    pub op: OpSel,
    pub kind: RmaKind,
    pub variant: NbVariant,
    pub strategy: TimingStrategy,
    pub algo: BcastAlgo,
    pub mode: LockMode,
    pub home: usize,
    pub requester: usize,
    pub nbytes: Vec<usize>,
    pub iters: usize,
    pub network: String,
    pub npes: Option<usize>,
    pub topology: BcastTopology,
    pub barrier: BarrierAlgo,
    pub expect: Option<Expect>,
    pub tolerance: f64,
}

impl MeasurementSpec {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            op: OpSel::Blocking,
            kind: RmaKind::Get,
            variant: NbVariant::Full,
            strategy: TimingStrategy::GlobalLoop,
            algo: BcastAlgo::SK,
            mode: LockMode::UncontendedSetClear,
            home: 0,
            requester: 0,
            nbytes: vec![0],
            iters: 100,
            network: String::new(),
            npes: None,
            topology: BcastTopology::BinomialTree,
            barrier: BarrierAlgo::Dissemination,
            expect: None,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn lock_scenario(&self) -> LockScenario {
        LockScenario::new(self.mode, PeId(self.home), PeId(self.requester))
    }

    /// Label for the `algo` output column.
    pub fn label(&self) -> String {
        match self.op {
            OpSel::Blocking => format!("{}/{}", kind_name(self.kind), strategy_name(self.strategy)),
            OpSel::Nonblocking => format!(
                "{}/{}/{}",
                kind_name(self.kind),
                variant_name(self.variant),
                strategy_name(self.strategy)
            ),
            OpSel::Quiet => strategy_name(self.strategy).to_string(),
            OpSel::Bcast => self.algo.name().to_string(),
            OpSel::Barrier => barrier_name(self.barrier),
            OpSel::Lock => mode_name(self.mode),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub run: RunConfig,
    pub networks: Vec<(String, NetworkModel)>,
    pub clock: ClockPreset,
    pub measurements: Vec<MeasurementSpec>,
}

impl BenchConfig {
    pub fn network(&self, name: &str) -> Option<&NetworkModel> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn npes_of(&self, m: &MeasurementSpec) -> usize {
        m.npes.unwrap_or(self.run.npes)
    }

    /// Writes the configuration back in the accepted text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.run;
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "npes = {}", r.npes);
        let _ = writeln!(s, "seed = {}", r.seed);
        let _ = writeln!(s, "format = {}", r.format.name());
        let _ = writeln!(s, "sigma_threshold = {}", r.sigma_threshold);
        let _ = writeln!(s, "max_reps = {}", r.max_reps);
        let c = &self.clock;
        let _ = writeln!(s, "\n[clock]");
        let _ = writeln!(s, "drift = {}", c.drift);
        let _ = writeln!(s, "offset = {}s", c.offset);
        let _ = writeln!(s, "timer_overhead = {}s", c.timer_overhead);
        let _ = writeln!(s, "jitter = {}s", c.jitter);
        for (name, n) in &self.networks {
            let _ = writeln!(s, "\n[network.{name}]");
            let _ = writeln!(s, "o_s = {}s", n.o_s);
            let _ = writeln!(s, "o_r = {}s", n.o_r);
            let _ = writeln!(s, "L = {}s", n.latency);
            let _ = writeln!(s, "g = {}s", n.gap);
            let _ = writeln!(s, "G = {}s", n.per_byte);
            let progress = match n.progress {
                ProgressMode::Background => "background",
                ProgressMode::OnQuiet => "on_quiet",
            };
            let _ = writeln!(s, "progress = {progress}");
            let put_return = match n.put_return {
                PutReturnPolicy::LocalCompletion => "local",
                PutReturnPolicy::RemoteCompletion => "remote",
            };
            let _ = writeln!(s, "put_return = {put_return}");
            if let Some(q) = n.quiet_base {
                let _ = writeln!(s, "quiet_base = {q}s");
            }
        }
        for m in &self.measurements {
            let _ = writeln!(s, "\n[measurement.{}]", m.name);
            let _ = writeln!(s, "op = {}", m.op.name());
            let _ = writeln!(s, "kind = {}", kind_name(m.kind));
            let _ = writeln!(s, "variant = {}", variant_name(m.variant));
            let _ = writeln!(s, "strategy = {}", strategy_name(m.strategy));
            let _ = writeln!(s, "algo = {}", m.algo.name());
            let _ = writeln!(s, "scenario = {}", mode_name(m.mode));
            let _ = writeln!(s, "home = {}", m.home);
            let _ = writeln!(s, "requester = {}", m.requester);
            let sizes: Vec<String> = m.nbytes.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "nbytes = {}", sizes.join(", "));
            let _ = writeln!(s, "iters = {}", m.iters);
            let _ = writeln!(s, "network = {}", m.network);
            if let Some(n) = m.npes {
                let _ = writeln!(s, "npes = {n}");
            }
            let topology = match m.topology {
                BcastTopology::BinomialTree => "binomial",
                BcastTopology::Linear => "linear",
            };
            let _ = writeln!(s, "topology = {topology}");
            let _ = writeln!(s, "barrier = {}", barrier_name(m.barrier));
            if m.expect == Some(Expect::BiasedLow) {
                let _ = writeln!(s, "expect = biased_low");
            }
            let _ = writeln!(s, "tolerance = {}", m.tolerance);
        }
        s
    }
}

fn kind_name(k: RmaKind) -> &'static str {
    match k {
        RmaKind::Get => "get",
        RmaKind::Put => "put",
    }
}

fn variant_name(v: NbVariant) -> &'static str {
    match v {
        NbVariant::Full => "full",
        NbVariant::Quiet => "quiet",
        NbVariant::Post => "post",
        NbVariant::Overlap => "overlap",
    }
}

fn strategy_name(s: TimingStrategy) -> &'static str {
    match s {
        TimingStrategy::GlobalLoop => "global_loop",
        TimingStrategy::PerIteration => "per_iteration",
        TimingStrategy::SubtractPost => "subtract_post",
    }
}

fn barrier_name(b: BarrierAlgo) -> String {
    match b {
        BarrierAlgo::Dissemination => "dissemination".into(),
        BarrierAlgo::ReduceBroadcast(r) => format!("reduce_broadcast:{}", r.0),
    }
}

fn mode_name(m: LockMode) -> String {
    match m {
        LockMode::UncontendedSetClear => "uncontended_set_clear".into(),
        LockMode::ContendedSet(k) => format!("contended_set:{k}"),
        LockMode::TestHeld => "test_held".into(),
        LockMode::TestFree => "test_free".into(),
    }
}

/// Parses `1us`, `2.5 ms`, `3e-9s`; a bare number is seconds.
pub fn parse_duration(s: &str) -> Option<f64> {
    let s = s.trim();
    let (num, scale) = [("ns", 1e-9), ("us", 1e-6), ("ms", 1e-3), ("s", 1.0)]
        .iter()
        .find_map(|(suffix, scale)| s.strip_suffix(suffix).map(|n| (n, *scale)))
        .unwrap_or((s, 1.0));
    let v: f64 = num.trim().parse().ok()?;
    (v.is_finite() && v >= 0.0).then_some(v * scale)
}

/// Parses `64`, `1K`, `1M` (binary multiples).
pub fn parse_size(s: &str) -> Option<usize> {
    let s = s.trim();
    let (num, scale) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1 << 10),
        'M' | 'm' => (&s[..s.len() - 1], 1 << 20),
        'G' | 'g' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    num.trim().parse::<usize>().ok()?.checked_mul(scale)
}

/// `2%` or `0.02`.
fn parse_fraction(s: &str) -> Option<f64> {
    let v = match s.strip_suffix('%') {
        Some(p) => p.trim().parse::<f64>().ok()? / 100.0,
        None => s.parse().ok()?,
    };
    (v >= 0.0 && !v.is_nan()).then_some(v)
}

fn parse_lock_mode(s: &str) -> Option<LockMode> {
    Some(match s {
        "uncontended_set_clear" => LockMode::UncontendedSetClear,
        "test_held" => LockMode::TestHeld,
        "test_free" => LockMode::TestFree,
        _ => LockMode::ContendedSet(s.strip_prefix("contended_set:")?.parse().ok()?),
    })
}

fn parse_barrier(s: &str) -> Option<BarrierAlgo> {
    match s {
        "dissemination" => Some(BarrierAlgo::Dissemination),
        "reduce_broadcast" => Some(BarrierAlgo::ReduceBroadcast(PeId(0))),
        _ => Some(BarrierAlgo::ReduceBroadcast(PeId(
            s.strip_prefix("reduce_broadcast:")?.parse().ok()?,
        ))),
    }
}

fn parse_algo(s: &str) -> Option<BcastAlgo> {
    [
        BcastAlgo::NaiveLoop,
        BcastAlgo::BarrierSync,
        BcastAlgo::ActiveSync,
        BcastAlgo::Rounds,
        BcastAlgo::SK,
    ]
    .into_iter()
    .find(|a| a.name() == s)
}

enum Section {
    Run,
    Clock,
    Network(usize),
    Measurement(usize),
}

fn invalid<T>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    err(line, format!("invalid value for {key}: {value:?}"))
}

macro_rules! field {
    ($line:expr, $key:expr, $value:expr, $parse:expr) => {
        match $parse {
            Some(v) => v,
            None => return invalid($line, $key, $value),
        }
    };
}

fn set_run(r: &mut RunConfig, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "npes" => r.npes = field!(line, key, v, v.parse().ok().filter(|&n| n >= 1)),
        "seed" => r.seed = field!(line, key, v, v.parse().ok()),
        "format" => r.format = field!(line, key, v, OutputFormat::parse(v)),
        "sigma_threshold" => r.sigma_threshold = field!(line, key, v, parse_fraction(v)),
        "max_reps" => r.max_reps = field!(line, key, v, v.parse().ok().filter(|&n| n >= 2)),
        _ => return err(line, format!("unknown key {key:?} in [run]")),
    }
    Ok(())
}

fn set_clock(c: &mut ClockPreset, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "drift" => c.drift = field!(line, key, v, v.parse().ok().filter(|d: &f64| d.is_finite() && *d > -1.0)),
        "offset" => {
            let (neg, rest) = v.strip_prefix('-').map_or((false, v), |r| (true, r));
            let d = field!(line, key, v, parse_duration(rest));
            c.offset = if neg { -d } else { d };
        }
        "timer_overhead" => c.timer_overhead = field!(line, key, v, parse_duration(v)),
        "jitter" => c.jitter = field!(line, key, v, parse_duration(v)),
        _ => return err(line, format!("unknown key {key:?} in [clock]")),
    }
    Ok(())
}

fn set_network(n: &mut NetworkModel, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "o_s" => n.o_s = field!(line, key, v, parse_duration(v)),
        "o_r" => n.o_r = field!(line, key, v, parse_duration(v)),
        "L" => n.latency = field!(line, key, v, parse_duration(v)),
        "g" => n.gap = field!(line, key, v, parse_duration(v)),
        "G" => n.per_byte = field!(line, key, v, parse_duration(v)),
        "quiet_base" => n.quiet_base = Some(field!(line, key, v, parse_duration(v))),
        "progress" => {
            n.progress = match v {
                "background" => ProgressMode::Background,
                "on_quiet" => ProgressMode::OnQuiet,
                _ => return invalid(line, key, v),
            }
        }
        "put_return" => {
            n.put_return = match v {
                "local" => PutReturnPolicy::LocalCompletion,
                "remote" => PutReturnPolicy::RemoteCompletion,
                _ => return invalid(line, key, v),
            }
        }
        _ => return err(line, format!("unknown key {key:?} in network section")),
    }
    Ok(())
}

const MEASUREMENT_KEYS: [&str; 16] = [
    "op", "kind", "variant", "strategy", "algo", "scenario", "home", "requester", "nbytes", "iters", "network",
    "npes", "topology", "barrier", "expect", "tolerance",
];

fn set_measurement(m: &mut MeasurementSpec, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "op" => m.op = field!(line, key, v, OpSel::parse(v)),
        "kind" => {
            m.kind = match v {
                "get" => RmaKind::Get,
                "put" => RmaKind::Put,
                _ => return invalid(line, key, v),
            }
        }
        "variant" => {
            m.variant = match v {
                "full" => NbVariant::Full,
                "quiet" => NbVariant::Quiet,
                "post" => NbVariant::Post,
                "overlap" => NbVariant::Overlap,
                _ => return invalid(line, key, v),
            }
        }
        "strategy" => {
            m.strategy = match v {
                "global_loop" => TimingStrategy::GlobalLoop,
                "per_iteration" => TimingStrategy::PerIteration,
                "subtract_post" => TimingStrategy::SubtractPost,
                _ => return invalid(line, key, v),
            }
        }
        "algo" => m.algo = field!(line, key, v, parse_algo(v)),
        "scenario" => m.mode = field!(line, key, v, parse_lock_mode(v)),
        "home" => m.home = field!(line, key, v, v.parse().ok()),
        "requester" => m.requester = field!(line, key, v, v.parse().ok()),
        "nbytes" => {
            let sizes: Option<Vec<usize>> = v.split(',').map(parse_size).collect();
            m.nbytes = field!(line, key, v, sizes);
            if m.nbytes.is_empty() || m.nbytes.windows(2).any(|w| w[0] >= w[1]) {
                return err(line, "nbytes must be a non-empty ascending list");
            }
        }
        "iters" => m.iters = field!(line, key, v, v.parse().ok().filter(|&n| n >= 1)),
        "network" => m.network = v.to_string(),
        "npes" => m.npes = Some(field!(line, key, v, v.parse().ok().filter(|&n| n >= 1))),
        "topology" => {
            m.topology = match v {
                "binomial" => BcastTopology::BinomialTree,
                "linear" => BcastTopology::Linear,
                _ => return invalid(line, key, v),
            }
        }
        "barrier" => m.barrier = field!(line, key, v, parse_barrier(v)),
        "expect" => {
            m.expect = match v {
                "biased_low" => Some(Expect::BiasedLow),
                _ => return invalid(line, key, v),
            }
        }
        "tolerance" => m.tolerance = field!(line, key, v, parse_fraction(v)),
        _ => return err(line, format!("unknown key {key:?} in [measurement.{}]", m.name)),
    }
    Ok(())
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn parse_config(text: &str) -> Result<BenchConfig, ConfigError> {
    let mut cfg = BenchConfig {
        run: RunConfig::default(),
        networks: Vec::new(),
        clock: ClockPreset::default(),
        measurements: Vec::new(),
    };
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut section: Option<Section> = None;
    let mut header_line = Vec::new();
    let mut given: Vec<BTreeSet<&'static str>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(inner) = content.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']').map(str::trim) else {
                return err(line, format!("malformed section header {content:?}"));
            };
            if !seen.insert(name.to_string()) {
                return err(line, format!("duplicate section [{name}]"));
            }
            section = Some(match name {
                "run" => Section::Run,
                "clock" => Section::Clock,
                _ => {
                    if let Some(n) = name.strip_prefix("network.").filter(|n| valid_name(n)) {
                        cfg.networks.push((n.to_string(), NetworkModel::zero()));
                        Section::Network(cfg.networks.len() - 1)
                    } else if let Some(n) = name.strip_prefix("measurement.").filter(|n| valid_name(n)) {
                        cfg.measurements.push(MeasurementSpec::new(n));
                        header_line.push(line);
                        given.push(BTreeSet::new());
                        Section::Measurement(cfg.measurements.len() - 1)
                    } else {
                        return err(line, format!("unknown section [{name}]"));
                    }
                }
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return err(line, format!("expected `key = value`, found {content:?}"));
        };
        let (key, value) = (key.trim(), value.trim());
        match section.as_mut() {
            None => return err(line, format!("key {key:?} outside any section")),
            Some(Section::Run) => set_run(&mut cfg.run, line, key, value)?,
            Some(Section::Clock) => set_clock(&mut cfg.clock, line, key, value)?,
            Some(Section::Network(i)) => set_network(&mut cfg.networks[*i].1, line, key, value)?,
            Some(Section::Measurement(i)) => {
                let m = &mut cfg.measurements[*i];
                set_measurement(m, line, key, value)?;
                let k = MEASUREMENT_KEYS.iter().find(|k| **k == key).copied().unwrap_or("");
                if !given[*i].insert(k) {
                    return err(line, format!("duplicate key {key:?} in [measurement.{}]", m.name));
                }
            }
        }
    }
    validate(&mut cfg, &header_line, &given)?;
    Ok(cfg)
}

fn validate(cfg: &mut BenchConfig, header_line: &[usize], given: &[BTreeSet<&str>]) -> Result<(), ConfigError> {
    if cfg.measurements.is_empty() {
        return err(None, "no measurements");
    }
    for (name, n) in &cfg.networks {
        if let Err(e) = n.validate() {
            return err(None, format!("network {name}: {e}"));
        }
    }
    for (i, m) in cfg.measurements.iter_mut().enumerate() {
        let line = header_line[i];
        for key in ["op", "nbytes"] {
            if !given[i].contains(key) && (key == "op" || m.op.sized()) {
                return err(line, format!("measurement {}: missing required key {key:?}", m.name));
            }
        }
        if m.network.is_empty() {
            match cfg.networks.as_slice() {
                [(only, _)] => m.network = only.clone(),
                [] => return err(line, format!("measurement {}: no network defined", m.name)),
                _ => return err(line, format!("measurement {}: missing required key \"network\"", m.name)),
            }
        }
        if !cfg.networks.iter().any(|(n, _)| *n == m.network) {
            return err(line, format!("measurement {}: unknown network {:?}", m.name, m.network));
        }
        let npes = m.npes.unwrap_or(cfg.run.npes);
        let pair = matches!(m.op, OpSel::Blocking | OpSel::Nonblocking | OpSel::Quiet);
        if pair && npes < 2 {
            return err(line, format!("measurement {}: needs at least 2 PEs", m.name));
        }
        if m.op == OpSel::Lock {
            if let Err(e) = m.lock_scenario().validate(npes) {
                return err(line, format!("measurement {}: {e}", m.name));
            }
        }
        if let BarrierAlgo::ReduceBroadcast(r) = m.barrier {
            if r.0 >= npes {
                return err(line, format!("measurement {}: barrier root {} out of range", m.name, r.0));
            }
        }
    }
    Ok(())
}
