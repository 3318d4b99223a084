//! Point-to-point measurements between PE 0 and PE 1.
//!
//! Every measurement is expressed as a [`Script`]: a flat list of timer
//! reads, runtime calls and busy-waits that PE 0 interprets inside the
//! simulator while PE 1 stays passive. Keeping the program as data lets the
//! structure be checked (each quiet pairs with its own posted operation) and
//! lets the true cost of each step be read back from the trace.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::sim::{OpKind, PeId, SimError, World};
use crate::stats;
use crate::BenchError;

const SRC: PeId = PeId(0);
const DST: PeId = PeId(1);
const BUF: usize = 0;
const CALIBRATION_UNITS: u64 = 1 << 20;
const PILOT_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimingStrategy {
    /// One timer pair around the whole loop.
    GlobalLoop,
    /// A timer pair around each iteration.
    PerIteration,
    /// Time the whole loop and subtract a separately measured post cost.
    SubtractPost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RmaKind {
    Get,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NbVariant {
    Full,
    Quiet,
    Post,
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Post,
    Quiet,
    Full,
    OverlapActive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2PResult {
    pub mean: f64,
    pub samples: usize,
    pub strategy: TimingStrategy,
    pub nbytes: usize,
    pub components: BTreeMap<Component, f64>,
    /// True cost of the measured construct, from the trace.
    pub ground_truth: f64,
    pub unstable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Put(usize),
    Get(usize),
    PutNbi(usize),
    GetNbi(usize),
    Quiet,
}

impl Action {
    fn posts(self) -> bool {
        !matches!(self, Action::Quiet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    TimerStart(usize),
    TimerStop(usize),
    Op(Action),
    Spin(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub prologue: Vec<Step>,
    pub body: Vec<Step>,
    pub iters: usize,
    pub epilogue: Vec<Step>,
}

impl Script {
    fn looped(body: Vec<Step>, iters: usize) -> Self {
        Self {
            prologue: vec![Step::TimerStart(0)],
            body,
            iters,
            epilogue: vec![Step::TimerStop(0)],
        }
    }

    fn per_iteration(body: Vec<Step>, iters: usize) -> Self {
        Self {
            prologue: Vec::new(),
            body,
            iters,
            epilogue: Vec::new(),
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.prologue
            .iter()
            .chain((0..self.iters).flat_map(move |_| self.body.iter()))
            .chain(self.epilogue.iter())
    }

    fn accumulators(&self) -> usize {
        self.steps()
            .filter_map(|s| match s {
                Step::TimerStart(k) | Step::TimerStop(k) => Some(k + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// `true` if every quiet has at least one operation posted since the
    /// previous quiet.
    pub fn quiets_paired(&self) -> bool {
        let mut outstanding = false;
        for step in self.steps() {
            match step {
                Step::Op(Action::Quiet) if !outstanding => return false,
                Step::Op(Action::Quiet) => outstanding = false,
                Step::Op(a) if a.posts() => outstanding = true,
                _ => {}
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptRun {
    /// Sum of (stop - start) local-clock intervals per accumulator.
    pub acc: Vec<f64>,
    /// Per body step: true elapsed time summed over all iterations.
    pub body_truth: Vec<f64>,
}

impl ScriptRun {
    fn truth_per_iter(&self, steps: &[usize], iters: usize) -> f64 {
        steps.iter().map(|&i| self.body_truth[i]).sum::<f64>() / iters as f64
    }
}

/// Runs `script` on PE 0 with every other PE passive.
pub fn run_script(world: &mut World, script: &Script) -> Result<ScriptRun, BenchError> {
    if script.iters == 0 {
        return Err(BenchError::Invalid("iterations must be >= 1".into()));
    }
    let nacc = script.accumulators();
    let shared = Rc::new(script.clone());
    let out = world.run_each(|pe| {
        let script = shared.clone();
        async move {
            if pe.id() != SRC {
                return Ok(Vec::new());
            }
            let mut acc = vec![0.0; nacc];
            let mut start = vec![0.0; nacc];
            for step in script.steps() {
                match *step {
                    Step::TimerStart(k) => start[k] = pe.timer().await?,
                    Step::TimerStop(k) => acc[k] += pe.timer().await? - start[k],
                    Step::Spin(units) => pe.spin(units).await?,
                    Step::Op(Action::Put(n)) => pe.put(DST, BUF, n).await?,
                    Step::Op(Action::Get(n)) => pe.get(DST, BUF, n).await?,
                    Step::Op(Action::PutNbi(n)) => pe.put_nbi(DST, BUF, n).await.map(|_| ())?,
                    Step::Op(Action::GetNbi(n)) => pe.get_nbi(DST, BUF, n).await.map(|_| ())?,
                    Step::Op(Action::Quiet) => pe.quiet().await?,
                }
            }
            Ok::<_, SimError>(acc)
        }
    })?;

    let mut body_truth = vec![0.0; script.body.len()];
    let mut ops = out.trace.ops.iter().filter(|o| o.pe == SRC);
    let op_steps = |steps: &[Step]| steps.iter().filter(|s| matches!(s, Step::Op(_))).count();
    for _ in 0..op_steps(&script.prologue) {
        ops.next();
    }
    for _ in 0..script.iters {
        for (j, step) in script.body.iter().enumerate() {
            if let Step::Op(_) = step {
                let op = ops.next().expect("one record per runtime call");
                body_truth[j] += op.elapsed().unwrap_or(0.0);
            }
        }
    }
    let acc = out.results.into_iter().next().unwrap_or_default();
    Ok(ScriptRun { acc, body_truth })
}

fn check_pair(world: &World, nbytes: usize) -> Result<(), BenchError> {
    if world.npes() < 2 {
        return Err(BenchError::Invalid("point-to-point measurements need 2 PEs".into()));
    }
    let heap = world.config().heap_bytes;
    if nbytes.max(1) > heap {
        return Err(SimError::HeapFault {
            pe: DST,
            offset: BUF,
            len: nbytes,
            heap,
        }
        .into());
    }
    Ok(())
}

fn clamp(x: f64, unstable: &mut bool) -> f64 {
    if x < 0.0 {
        *unstable = true;
        0.0
    } else {
        x
    }
}

fn result(mean: f64, gt: f64, nbytes: usize, iters: usize, strategy: TimingStrategy) -> P2PResult {
    P2PResult {
        mean,
        samples: iters,
        strategy,
        nbytes,
        components: BTreeMap::new(),
        ground_truth: gt,
        unstable: false,
    }
}

/// Blocking get, or put completed by quiet with the quiet cost removed.
pub fn measure_blocking(
    world: &mut World,
    kind: RmaKind,
    nbytes: usize,
    iters: usize,
    strategy: TimingStrategy,
) -> Result<P2PResult, BenchError> {
    check_pair(world, nbytes)?;
    match kind {
        RmaKind::Get => {
            let op = Step::Op(Action::Get(nbytes));
            let (script, idx) = match strategy {
                TimingStrategy::PerIteration => (
                    Script::per_iteration(vec![Step::TimerStart(0), op, Step::TimerStop(0)], iters),
                    1,
                ),
                _ => (Script::looped(vec![op], iters), 0),
            };
            let run = run_script(world, &script)?;
            let mean = run.acc[0] / iters as f64;
            Ok(result(mean, run.truth_per_iter(&[idx], iters), nbytes, iters, strategy))
        }
        RmaKind::Put => {
            let ops = [Step::Op(Action::Put(nbytes)), Step::Op(Action::Quiet)];
            let (script, idx) = match strategy {
                TimingStrategy::PerIteration => (
                    Script::per_iteration(vec![Step::TimerStart(0), ops[0], ops[1], Step::TimerStop(0)], iters),
                    [1, 2],
                ),
                _ => (Script::looped(ops.to_vec(), iters), [0, 1]),
            };
            let run = run_script(world, &script)?;
            let full = run.acc[0] / iters as f64;
            let quiet = measure_quiet(world, iters, strategy)?;
            let mut r = result(0.0, 0.0, nbytes, iters, strategy);
            r.mean = clamp(full - quiet.mean, &mut r.unstable);
            r.ground_truth = run.truth_per_iter(&idx, iters) - quiet.ground_truth;
            r.components.insert(Component::Full, full);
            r.components.insert(Component::Quiet, quiet.mean);
            Ok(r)
        }
    }
}

/// Cost of a quiet that has a single one-byte put to complete.
pub fn measure_quiet(world: &mut World, iters: usize, strategy: TimingStrategy) -> Result<P2PResult, BenchError> {
    check_pair(world, 1)?;
    let ops = [Step::Op(Action::PutNbi(1)), Step::Op(Action::Quiet)];
    let (script, idx) = match strategy {
        TimingStrategy::PerIteration => (
            Script::per_iteration(vec![Step::TimerStart(0), ops[0], ops[1], Step::TimerStop(0)], iters),
            [1, 2],
        ),
        _ => (Script::looped(ops.to_vec(), iters), [0, 1]),
    };
    let run = run_script(world, &script)?;
    let mean = run.acc[0] / iters as f64;
    Ok(result(mean, run.truth_per_iter(&idx, iters), 1, iters, strategy))
}

fn nbi(kind: RmaKind, nbytes: usize) -> Step {
    match kind {
        RmaKind::Put => Step::Op(Action::PutNbi(nbytes)),
        RmaKind::Get => Step::Op(Action::GetNbi(nbytes)),
    }
}

/// The scripts a non-blocking measurement runs, in order, without the
/// busy-wait length that overlap fills in after its pilot.
pub fn nonblocking_scripts(
    kind: RmaKind,
    variant: NbVariant,
    nbytes: usize,
    iters: usize,
    strategy: TimingStrategy,
    spin_units: u64,
) -> Vec<Script> {
    use Step::*;
    let post = nbi(kind, nbytes);
    let quiet = Op(Action::Quiet);
    let per_iter = strategy == TimingStrategy::PerIteration;
    match variant {
        NbVariant::Full if per_iter => vec![Script::per_iteration(
            vec![TimerStart(0), post, TimerStop(0), TimerStart(1), quiet, TimerStop(1)],
            iters,
        )],
        NbVariant::Full => vec![Script::looped(vec![post, quiet], iters)],
        NbVariant::Post if per_iter => vec![Script::per_iteration(vec![TimerStart(0), post, TimerStop(0), quiet], iters)],
        NbVariant::Post => {
            let mut s = Script::looped(vec![post], iters);
            s.epilogue.push(quiet);
            vec![s]
        }
        NbVariant::Quiet if per_iter => vec![Script::per_iteration(vec![post, TimerStart(0), quiet, TimerStop(0)], iters)],
        NbVariant::Quiet => {
            let mut pre = nonblocking_scripts(kind, NbVariant::Post, nbytes, iters, TimingStrategy::GlobalLoop, 0);
            pre.push(Script::looped(vec![post, quiet], iters));
            pre
        }
        NbVariant::Overlap if per_iter => vec![Script::per_iteration(
            vec![TimerStart(0), post, TimerStop(0), Spin(spin_units), TimerStart(1), quiet, TimerStop(1)],
            iters,
        )],
        NbVariant::Overlap => vec![Script::looped(vec![post, Spin(spin_units), quiet], iters)],
    }
}

fn truth_of(script: &Script, run: &ScriptRun, pred: impl Fn(Action) -> bool) -> f64 {
    let idx: Vec<usize> = script
        .body
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Step::Op(a) if pred(*a)))
        .map(|(i, _)| i)
        .collect();
    run.truth_per_iter(&idx, script.iters)
}

/// Non-blocking put or get, split as selected by `variant`.
pub fn measure_nonblocking(
    world: &mut World,
    kind: RmaKind,
    variant: NbVariant,
    nbytes: usize,
    iters: usize,
    strategy: TimingStrategy,
) -> Result<P2PResult, BenchError> {
    check_pair(world, nbytes)?;
    let n = iters as f64;
    let mut r = result(0.0, 0.0, nbytes, iters, strategy);
    let is_post = |a: Action| a.posts();
    let is_quiet = |a: Action| a == Action::Quiet;
    let any = |_: Action| true;
    let per_iter = strategy == TimingStrategy::PerIteration;

    let mut spin_units = 0;
    let mut busy_time = 0.0;
    if variant == NbVariant::Overlap {
        let (full, unstable) = pilot_full(world, kind, nbytes, iters)?;
        let rate = calibrate_busy_wait(world, SRC)?;
        spin_units = busy_wait_units(2.0 * full, rate);
        busy_time = spin_units as f64 / rate;
        r.unstable = unstable;
        r.components.insert(Component::Full, full);
    }

    let scripts = nonblocking_scripts(kind, variant, nbytes, iters, strategy, spin_units);
    let mut runs = Vec::with_capacity(scripts.len());
    for s in &scripts {
        runs.push(run_script(world, s)?);
    }
    let last = scripts.len() - 1;
    let (script, run) = (&scripts[last], &runs[last]);
    let split = |r: &mut P2PResult| {
        r.components.insert(Component::Post, run.acc[0] / n);
        r.components.insert(Component::Quiet, run.acc[1] / n);
        (run.acc[0] + run.acc[1]) / n
    };

    match variant {
        NbVariant::Full => {
            r.mean = if per_iter { split(&mut r) } else { run.acc[0] / n };
            r.ground_truth = truth_of(script, run, any);
            r.components.insert(Component::Full, r.mean);
        }
        NbVariant::Post => {
            r.mean = run.acc[0] / n;
            r.ground_truth = truth_of(script, run, is_post);
            r.components.insert(Component::Post, r.mean);
        }
        NbVariant::Quiet if per_iter => {
            r.mean = run.acc[0] / n;
            r.ground_truth = truth_of(script, run, is_quiet);
        }
        NbVariant::Quiet => {
            let tpost = runs[0].acc[0] / n;
            let full = run.acc[0] / n;
            r.mean = clamp(full - tpost, &mut r.unstable);
            r.ground_truth = truth_of(script, run, is_quiet);
            r.components.insert(Component::Post, tpost);
            r.components.insert(Component::Full, full);
        }
        NbVariant::Overlap => {
            r.mean = if per_iter {
                split(&mut r)
            } else {
                let active = run.acc[0] / n - busy_time;
                clamp(active, &mut r.unstable)
            };
            r.ground_truth = truth_of(script, run, any);
            r.components.insert(Component::OverlapActive, r.mean);
        }
    }
    if variant == NbVariant::Quiet {
        r.components.insert(Component::Quiet, r.mean);
    }
    Ok(r)
}

/// Full post+quiet cost measured with a global loop in a few blocks; the
/// flag is set when the blocks disagree by more than the default threshold.
fn pilot_full(world: &mut World, kind: RmaKind, nbytes: usize, iters: usize) -> Result<(f64, bool), BenchError> {
    let per_block = iters.div_ceil(PILOT_BLOCKS).max(1);
    let script = Script::looped(vec![nbi(kind, nbytes), Step::Op(Action::Quiet)], per_block);
    let mut blocks = Vec::with_capacity(PILOT_BLOCKS);
    for _ in 0..PILOT_BLOCKS {
        blocks.push(run_script(world, &script)?.acc[0] / per_block as f64);
    }
    Ok((stats::mean(&blocks), stats::is_unstable(&blocks, stats::DEFAULT_SIGMA_THRESHOLD)))
}

/// Busy-wait work units per second on `pe`, from two timed spins of
/// different length so the timer cost cancels.
pub fn calibrate_busy_wait(world: &mut World, pe: PeId) -> Result<f64, BenchError> {
    if pe.0 >= world.npes() {
        return Err(SimError::UnknownPe(pe).into());
    }
    let out = world.run_each(move |me| async move {
        if me.id() != pe {
            return Ok(0.0);
        }
        let t0 = me.timer().await?;
        me.spin(CALIBRATION_UNITS).await?;
        let t1 = me.timer().await?;
        me.spin(2 * CALIBRATION_UNITS).await?;
        let t2 = me.timer().await?;
        Ok(CALIBRATION_UNITS as f64 / ((t2 - t1) - (t1 - t0)))
    })?;
    Ok(out.results[pe.0])
}

/// Number of work units that busy-wait for at least `duration` at `rate`.
pub fn busy_wait_units(duration: f64, rate: f64) -> u64 {
    let x = (duration * rate).max(0.0);
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Whether every script a measurement would run pairs each quiet with its
/// own posted operation.
pub fn scripts_well_formed(kind: RmaKind, variant: NbVariant, iters: usize, strategy: TimingStrategy) -> bool {
    nonblocking_scripts(kind, variant, 8, iters, strategy, 1)
        .iter()
        .all(Script::quiets_paired)
}

/// Kinds of runtime calls made by a script, for diagnostics.
pub fn op_kinds(script: &Script) -> Vec<OpKind> {
    script
        .steps()
        .filter_map(|s| match s {
            Step::Op(Action::Put(_)) => Some(OpKind::Put),
            Step::Op(Action::Get(_)) => Some(OpKind::Get),
            Step::Op(Action::PutNbi(_)) => Some(OpKind::PutNbi),
            Step::Op(Action::GetNbi(_)) => Some(OpKind::GetNbi),
            Step::Op(Action::Quiet) => Some(OpKind::Quiet),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{ClockModel, NetworkModel, ProgressMode};
    use crate::sim::WorldConfig;

    fn world(net: NetworkModel, overhead: f64) -> World {
        let clock = ClockModel::perfect(2).with_timer_overhead(overhead);
        World::new(WorldConfig::new(2, net).with_clock(clock).with_heap(1 << 21)).unwrap()
    }

    fn net() -> NetworkModel {
        NetworkModel::logp(1e-7, 1e-7, 1e-6, 0.0, 1e-9)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-12)
    }

    #[test]
    fn zero_network_blocking_is_zero() {
        let mut w = world(NetworkModel::zero(), 0.0);
        for kind in [RmaKind::Get, RmaKind::Put] {
            let r = measure_blocking(&mut w, kind, 8, 16, TimingStrategy::GlobalLoop).unwrap();
            assert_eq!(r.mean, 0.0);
        }
        let q = measure_quiet(&mut w, 16, TimingStrategy::GlobalLoop).unwrap();
        assert_eq!(q.mean, 0.0);
    }

    #[test]
    fn get_global_loop_matches_trace() {
        let mut w = world(net(), 0.0);
        let r = measure_blocking(&mut w, RmaKind::Get, 1000, 32, TimingStrategy::GlobalLoop).unwrap();
        // 2 * (o_s + L + o_r) + G * n
        assert!(close(r.mean, 3.4e-6, 1e-12));
        assert!(close(r.mean, r.ground_truth, 1e-12));
    }

    #[test]
    fn strategies_agree_without_timer_cost() {
        let mut w = world(net(), 0.0);
        for kind in [RmaKind::Get, RmaKind::Put] {
            let a = measure_blocking(&mut w, kind, 64, 16, TimingStrategy::GlobalLoop).unwrap();
            let b = measure_blocking(&mut w, kind, 64, 16, TimingStrategy::PerIteration).unwrap();
            assert!((a.mean - b.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn per_iteration_adds_timer_cost() {
        let mut w = world(net(), 1e-7);
        let a = measure_blocking(&mut w, RmaKind::Get, 8, 100, TimingStrategy::GlobalLoop).unwrap();
        let b = measure_blocking(&mut w, RmaKind::Get, 8, 100, TimingStrategy::PerIteration).unwrap();
        // one read's charge lands inside each bracket; the global loop pays it once
        assert!(close(b.mean - a.mean, 1e-7 - 1e-9, 1e-9));
    }

    #[test]
    fn post_costs_send_overhead() {
        for progress in [ProgressMode::Background, ProgressMode::OnQuiet] {
            let mut w = world(net().with_progress(progress), 0.0);
            for n in [1, 1 << 16] {
                let r = measure_nonblocking(&mut w, RmaKind::Put, NbVariant::Post, n, 16, TimingStrategy::GlobalLoop)
                    .unwrap();
                assert!(close(r.mean, 1e-7, 1e-9));
            }
        }
    }

    #[test]
    fn onquiet_quiet_measures_transfer() {
        let m = net().with_progress(ProgressMode::OnQuiet);
        let mut w = world(m.clone(), 0.0);
        let q = measure_quiet(&mut w, 16, TimingStrategy::GlobalLoop).unwrap();
        // post o_s, then q0 + G + L + o_r
        assert!(close(q.mean, 1e-7 + 2e-7 + 1e-9 + 1e-6 + 1e-7, 1e-9));
    }

    #[test]
    fn full_is_post_plus_quiet_onquiet() {
        let mut w = world(net().with_progress(ProgressMode::OnQuiet), 0.0);
        let s = TimingStrategy::GlobalLoop;
        let full = measure_nonblocking(&mut w, RmaKind::Put, NbVariant::Full, 4096, 16, s).unwrap();
        let post = measure_nonblocking(&mut w, RmaKind::Put, NbVariant::Post, 4096, 16, s).unwrap();
        let quiet = measure_nonblocking(&mut w, RmaKind::Put, NbVariant::Quiet, 4096, 16, s).unwrap();
        assert!((full.mean - (post.mean + quiet.mean)).abs() <= 2.0 * 2e-7);
        assert!(close(quiet.mean, quiet.ground_truth, 1e-9));
    }

    #[test]
    fn overlap_background_is_post_plus_q0() {
        let mut w = world(net().with_progress(ProgressMode::Background), 0.0);
        for n in [1, 1 << 20] {
            let r = measure_nonblocking(&mut w, RmaKind::Put, NbVariant::Overlap, n, 8, TimingStrategy::GlobalLoop)
                .unwrap();
            assert!(close(r.mean, 3e-7, 1e-6), "{n}: {}", r.mean);
        }
    }

    #[test]
    fn blocking_put_not_above_full() {
        let mut w = world(net(), 0.0);
        let b = measure_blocking(&mut w, RmaKind::Put, 1024, 16, TimingStrategy::GlobalLoop).unwrap();
        let f = measure_nonblocking(&mut w, RmaKind::Put, NbVariant::Full, 1024, 16, TimingStrategy::GlobalLoop)
            .unwrap();
        assert!(b.mean <= f.mean);
        assert!(close(b.mean, b.ground_truth, 1e-9));
    }

    #[test]
    fn busy_wait_calibration() {
        let mut w = world(net(), 3e-8);
        let rate = calibrate_busy_wait(&mut w, PeId(0)).unwrap();
        assert!(close(rate, 1e9, 1e-9));
        assert_eq!(busy_wait_units(1e-6, rate), 1000);
        assert_eq!(busy_wait_units(0.0, rate), 0);
        assert_eq!(busy_wait_units(1.5e-9, 1e9), 2);
    }

    #[test]
    fn every_script_pairs_quiets() {
        for kind in [RmaKind::Get, RmaKind::Put] {
            for variant in [NbVariant::Full, NbVariant::Quiet, NbVariant::Post, NbVariant::Overlap] {
                for s in [TimingStrategy::GlobalLoop, TimingStrategy::PerIteration, TimingStrategy::SubtractPost] {
                    assert!(scripts_well_formed(kind, variant, 5, s), "{kind:?} {variant:?} {s:?}");
                }
            }
        }
    }

    #[test]
    fn unpaired_quiet_detected() {
        let s = Script::looped(vec![Step::Op(Action::PutNbi(1)), Step::Op(Action::Quiet), Step::Op(Action::Quiet)], 2);
        assert!(!s.quiets_paired());
    }

    #[test]
    fn needs_two_pes() {
        let mut w = World::new(WorldConfig::new(1, net())).unwrap();
        assert!(matches!(
            measure_blocking(&mut w, RmaKind::Get, 8, 4, TimingStrategy::GlobalLoop),
            Err(BenchError::Invalid(_))
        ));
    }
}
