//! Broadcast measurement algorithms.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::p2p::{busy_wait_units, calibrate_busy_wait};
use crate::sim::{Cmp, GroundTruthTrace, Pe, PeId, SimError, World, WorldConfig};
use crate::sync::{self, start_synchronization, stop_synchronization, SyncState};
use crate::BenchError;

/// Acknowledgment cell used by the SK protocol.
pub const ACK: usize = 0;
/// Broadcast payload offset.
pub const BUF: usize = 64;
const ROOT: PeId = PeId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BcastAlgo {
    NaiveLoop,
    BarrierSync,
    ActiveSync,
    Rounds,
    SK,
}

impl BcastAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BcastAlgo::NaiveLoop => "naive",
            BcastAlgo::BarrierSync => "barrier",
            BcastAlgo::ActiveSync => "active_sync",
            BcastAlgo::Rounds => "rounds",
            BcastAlgo::SK => "sk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcastMeasurement {
    pub algo: BcastAlgo,
    pub nbytes: usize,
    pub iterations: usize,
    pub result: f64,
    /// SK: `myt` for tasks 1..P in order.
    pub per_task: Option<Vec<f64>>,
    /// ActiveSync windows dropped because some PE started late.
    pub discarded: usize,
    /// A negative estimate was clamped to zero.
    pub flagged: bool,
    /// True duration of one isolated broadcast (mean over roots for Rounds).
    pub ground_truth: f64,
}

impl BcastMeasurement {
    fn new(algo: BcastAlgo, nbytes: usize, iterations: usize) -> Self {
        Self {
            algo,
            nbytes,
            iterations,
            result: 0.0,
            per_task: None,
            discarded: 0,
            flagged: false,
            ground_truth: 0.0,
        }
    }

    fn set_clamped(&mut self, x: f64) {
        if x < 0.0 {
            self.flagged = true;
            self.result = 0.0;
        } else {
            self.result = x;
        }
    }
}

fn check(world: &World, nbytes: usize, iters: usize) -> Result<(), BenchError> {
    if iters == 0 {
        return Err(BenchError::Invalid("iterations must be >= 1".into()));
    }
    let heap = world.config().heap_bytes;
    if BUF + nbytes > heap {
        return Err(SimError::HeapFault {
            pe: ROOT,
            offset: BUF,
            len: nbytes,
            heap,
        }
        .into());
    }
    Ok(())
}

/// Span of a single broadcast from `root` in a fresh world where every PE
/// enters at time zero.
pub fn isolated_bcast_span(cfg: &WorldConfig, root: PeId, nbytes: usize) -> Result<f64, BenchError> {
    let mut w = World::new(cfg.clone())?;
    let out = w.run_each(move |pe| async move { pe.broadcast(root, BUF, nbytes).await })?;
    Ok(out.trace.bcast_span(0)?)
}

/// Broadcasts in a loop timed on the root.
pub fn measure_bcast_naive(world: &mut World, nbytes: usize, iters: usize) -> Result<BcastMeasurement, BenchError> {
    check(world, nbytes, iters)?;
    let mut m = BcastMeasurement::new(BcastAlgo::NaiveLoop, nbytes, iters);
    let out = world.run_each(move |pe| async move {
        pe.barrier().await?;
        let t1 = pe.timer().await?;
        for _ in 0..iters {
            pe.broadcast(ROOT, BUF, nbytes).await?;
        }
        let t2 = pe.timer().await?;
        Ok::<_, SimError>((t2 - t1) / iters as f64)
    })?;
    m.result = out.results[ROOT.0];
    m.ground_truth = isolated_bcast_span(&world.config(), ROOT, nbytes)?;
    Ok(m)
}

/// Each broadcast followed by a barrier; the separately measured barrier
/// time is subtracted. Reports the largest per-PE value.
pub fn measure_bcast_barrier(
    world: &mut World,
    nbytes: usize,
    iters: usize,
    barrier_reps: usize,
) -> Result<BcastMeasurement, BenchError> {
    check(world, nbytes, iters)?;
    let mut m = BcastMeasurement::new(BcastAlgo::BarrierSync, nbytes, iters);
    let out = world.run_each(move |pe| async move {
        let mut acc = 0.0;
        pe.barrier().await?;
        for _ in 0..iters {
            let t1 = pe.timer().await?;
            pe.broadcast(ROOT, BUF, nbytes).await?;
            pe.barrier().await?;
            acc += pe.timer().await? - t1;
        }
        Ok::<_, SimError>(acc / iters as f64)
    })?;
    let t_barrier = sync::measure_barrier_time(world, barrier_reps)?;
    let worst = out.results.iter().copied().fold(f64::MIN, f64::max);
    m.set_clamped(worst - t_barrier);
    m.ground_truth = isolated_bcast_span(&world.config(), ROOT, nbytes)?;
    Ok(m)
}

/// Root-side duration of one (broadcast; barrier), used to size windows.
fn pilot(world: &mut World, nbytes: usize) -> Result<f64, BenchError> {
    let out = world.run_each(move |pe| async move {
        pe.barrier().await?;
        let t1 = pe.timer().await?;
        pe.broadcast(ROOT, BUF, nbytes).await?;
        pe.barrier().await?;
        Ok::<_, SimError>(pe.timer().await? - t1)
    })?;
    Ok(out.results[ROOT.0])
}

type WindowLog = Vec<(f64, f64, bool)>;

async fn windowed<F, Fut>(pe: Pe, state: Rc<SyncState>, windows: usize, body: F) -> Result<WindowLog, SimError>
where
    F: Fn(Pe) -> Fut,
    Fut: std::future::Future<Output = Result<(), SimError>>,
{
    let mut cursor = state.cursor(pe.id());
    let mut log = Vec::with_capacity(windows);
    for _ in 0..windows {
        let start = start_synchronization(&mut cursor, &pe).await?;
        body(pe.clone()).await?;
        let t2 = stop_synchronization(&mut cursor, &pe).await?;
        log.push((start.t1, t2, start.overrun));
    }
    Ok(log)
}

/// Per window: latest end over PEs translated to PE 0's clock, minus the
/// window start; `None` if any PE overran.
fn window_spans(state: &SyncState, logs: &[WindowLog]) -> Vec<Option<f64>> {
    let windows = logs.first().map_or(0, Vec::len);
    (0..windows)
        .map(|k| {
            if logs.iter().any(|l| l[k].2) {
                return None;
            }
            let end = logs
                .iter()
                .enumerate()
                .map(|(p, l)| l[k].1 - state.offsets[p])
                .fold(f64::MIN, f64::max);
            Some(end - state.slot(k))
        })
        .collect()
}

/// Prepares a synchronization schedule: estimated offsets and a window ten
/// times the pilot estimate.
pub fn prepare_sync(world: &mut World, nbytes: usize, ping_reps: usize) -> Result<SyncState, BenchError> {
    let mut state = sync::estimate_offsets(world, ping_reps)?;
    let p = pilot(world, nbytes)?;
    let window = if p > 0.0 { sync::WINDOW_FACTOR * p } else { 1e-9 };
    state.set_window(window)?;
    state.schedule_from_now(world, window)?;
    Ok(state)
}

/// Each broadcast in its own synchronized window.
pub fn measure_bcast_sync(
    world: &mut World,
    nbytes: usize,
    iters: usize,
    state: &mut SyncState,
) -> Result<BcastMeasurement, BenchError> {
    check(world, nbytes, iters)?;
    let mut m = BcastMeasurement::new(BcastAlgo::ActiveSync, nbytes, iters);
    let shared = Rc::new(state.clone());
    let out = world.run_each(|pe| {
        windowed(pe, shared.clone(), iters, move |pe| async move {
            pe.broadcast(ROOT, BUF, nbytes).await
        })
    })?;
    let spans = window_spans(state, &out.results);
    state.advance(iters);
    let kept: Vec<f64> = spans.iter().flatten().copied().collect();
    m.discarded = iters - kept.len();
    if 2 * m.discarded > iters {
        return Err(BenchError::Invalid(format!(
            "{} of {iters} synchronization windows overran",
            m.discarded
        )));
    }
    m.set_clamped(kept.iter().sum::<f64>() / kept.len() as f64);
    m.ground_truth = isolated_bcast_span(&world.config(), ROOT, nbytes)?;
    Ok(m)
}

/// One synchronized window around P broadcasts with rotating roots.
pub fn measure_bcast_rounds(world: &mut World, nbytes: usize, ping_reps: usize) -> Result<BcastMeasurement, BenchError> {
    check(world, nbytes, 1)?;
    let n = world.npes();
    let mut m = BcastMeasurement::new(BcastAlgo::Rounds, nbytes, n);
    let state = prepare_sync(world, nbytes, ping_reps)?;
    let shared = Rc::new(state.clone());
    let out = world.run_each(|pe| {
        windowed(pe, shared.clone(), 1, move |pe| async move {
            for root in 0..n {
                pe.broadcast(PeId(root), BUF, nbytes).await?;
            }
            Ok(())
        })
    })?;
    let span = window_spans(&state, &out.results)[0].unwrap_or_else(|| {
        m.discarded = 1;
        f64::NAN
    });
    if m.discarded > 0 {
        return Err(BenchError::Invalid("rounds window overran".into()));
    }
    m.set_clamped(span / n as f64);
    let cfg = world.config();
    let mut truth = 0.0;
    for root in 0..n {
        truth += isolated_bcast_span(&cfg, PeId(root), nbytes)?;
    }
    m.ground_truth = truth / n as f64;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkParams {
    /// Measured broadcasts per task.
    pub m: usize,
    /// Acknowledgment exchanges timed to calibrate one ack.
    pub rt1_reps: usize,
    /// Optional busy-wait between consecutive broadcasts, in seconds.
    pub sleep: f64,
}

impl SkParams {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            rt1_reps: m,
            sleep: 0.0,
        }
    }
}

async fn ack(pe: &Pe, to: PeId) -> Result<(), SimError> {
    pe.fetch_inc(to, ACK).await.map(|_| ())
}

async fn wait_for_ack(pe: &Pe) -> Result<(), SimError> {
    pe.wait_until(ACK, Cmp::Eq, 1).await?;
    pe.store(ACK, 0)
}

/// Root sends an ack and waits for the reply; `task` mirrors it.
async fn exchange(pe: &Pe, task: PeId) -> Result<(), SimError> {
    if pe.id() == ROOT {
        ack(pe, task).await?;
        wait_for_ack(pe).await
    } else if pe.id() == task {
        wait_for_ack(pe).await?;
        ack(pe, ROOT).await
    } else {
        Ok(())
    }
}

async fn sk_program(pe: Pe, nbytes: usize, p: SkParams, spin_units: u64, spin_time: f64) -> Result<Vec<f64>, SimError> {
    let me = pe.id();
    let mut mine = Vec::new();
    for task in (1..pe.npes()).map(PeId) {
        // init
        exchange(&pe, task).await?;
        let t1 = pe.timer().await?;
        for _ in 0..p.rt1_reps {
            exchange(&pe, task).await?;
        }
        let rt1 = (pe.timer().await? - t1) / p.rt1_reps as f64 / 2.0;
        // warm-up
        pe.broadcast(ROOT, BUF, nbytes).await?;
        exchange(&pe, task).await?;
        // measure
        let t1 = pe.timer().await?;
        for _ in 0..p.m {
            pe.broadcast(ROOT, BUF, nbytes).await?;
            if me == ROOT {
                wait_for_ack(&pe).await?;
            } else if me == task {
                ack(&pe, ROOT).await?;
            }
            if spin_units > 0 {
                pe.spin(spin_units).await?;
            }
        }
        let t2 = pe.timer().await?;
        if me == task {
            mine.push((t2 - t1) / p.m as f64 - rt1 - spin_time);
        }
    }
    Ok(mine)
}

/// One-sided acknowledged broadcast measurement. Returns the measurement
/// and the trace of the measuring run.
pub fn measure_bcast_sk_traced(
    world: &mut World,
    nbytes: usize,
    params: SkParams,
) -> Result<(BcastMeasurement, GroundTruthTrace), BenchError> {
    check(world, nbytes, params.m)?;
    if params.rt1_reps == 0 {
        return Err(BenchError::Invalid("rt1_reps must be >= 1".into()));
    }
    let n = world.npes();
    let mut m = BcastMeasurement::new(BcastAlgo::SK, nbytes, params.m);
    if n == 1 {
        m.per_task = Some(Vec::new());
        return Ok((m, GroundTruthTrace::default()));
    }
    let (spin_units, spin_time) = if params.sleep > 0.0 {
        let rate = calibrate_busy_wait(world, ROOT)?;
        let units = busy_wait_units(params.sleep, rate);
        (units, units as f64 / rate)
    } else {
        (0, 0.0)
    };
    world.write_bytes(ROOT, ACK, &0i64.to_le_bytes())?;
    for p in 1..n {
        world.write_bytes(PeId(p), ACK, &0i64.to_le_bytes())?;
    }
    let out = world.run_each(move |pe| sk_program(pe, nbytes, params, spin_units, spin_time))?;
    let per_task: Vec<f64> = out.results.iter().flatten().copied().collect();
    let worst = per_task.iter().copied().fold(0.0, f64::max);
    m.flagged = per_task.iter().any(|&t| t < 0.0);
    m.result = worst;
    m.per_task = Some(per_task);
    m.ground_truth = isolated_bcast_span(&world.config(), ROOT, nbytes)?;
    Ok((m, out.trace))
}

pub fn measure_bcast_sk(world: &mut World, nbytes: usize, params: SkParams) -> Result<BcastMeasurement, BenchError> {
    measure_bcast_sk_traced(world, nbytes, params).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::NetworkModel;
    use crate::sim::{BcastTopology, WorldConfig};

    fn net() -> NetworkModel {
        NetworkModel::logp(1e-7, 1e-7, 1e-6, 1e-7, 0.0)
    }

    fn world(n: usize) -> World {
        World::new(WorldConfig::new(n, net())).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-15)
    }

    #[test]
    fn single_pe_everything_zero() {
        let mut w = world(1);
        assert_eq!(measure_bcast_naive(&mut w, 8, 4).unwrap().result, 0.0);
        assert_eq!(measure_bcast_barrier(&mut w, 8, 4, 10).unwrap().result, 0.0);
        let mut s = prepare_sync(&mut w, 8, 4).unwrap();
        assert_eq!(measure_bcast_sync(&mut w, 8, 4, &mut s).unwrap().result, 0.0);
        assert_eq!(measure_bcast_sk(&mut w, 8, SkParams::new(4)).unwrap().result, 0.0);
        let r = measure_bcast_rounds(&mut w, 8, 4).unwrap();
        assert_eq!(r.result, r.ground_truth);
    }

    #[test]
    fn sk_two_pes_matches_truth() {
        let mut w = world(2);
        let r = measure_bcast_sk(&mut w, 8, SkParams::new(8)).unwrap();
        assert!(close(r.result, r.ground_truth, 1e-9), "{} vs {}", r.result, r.ground_truth);
        assert!(close(r.ground_truth, 1.2e-6, 1e-12));
    }

    #[test]
    fn sk_sleep_is_removed() {
        let mut w = world(4);
        let mut p = SkParams::new(8);
        p.sleep = 5e-6;
        let r = measure_bcast_sk(&mut w, 8, p).unwrap();
        assert!(close(r.result, r.ground_truth, 1e-6));
    }

    #[test]
    fn naive_underestimates_on_binomial_tree() {
        let mut w = world(8);
        let r = measure_bcast_naive(&mut w, 8, 32).unwrap();
        assert!(r.result < r.ground_truth);
    }

    #[test]
    fn naive_linear_is_root_bound() {
        let m = NetworkModel::logp(1e-7, 1e-7, 1e-6, 5e-7, 0.0);
        let mut w = World::new(WorldConfig::new(4, m).with_topology(BcastTopology::Linear)).unwrap();
        let r = measure_bcast_naive(&mut w, 8, 64).unwrap();
        // three injections spaced by g per broadcast
        assert!(close(r.result, 3.0 * 5e-7, 0.02), "{}", r.result);
    }

    #[test]
    fn active_sync_exact_with_perfect_clocks() {
        let mut w = world(8);
        let mut s = prepare_sync(&mut w, 8, 4).unwrap();
        let r = measure_bcast_sync(&mut w, 8, 16, &mut s).unwrap();
        assert_eq!(r.discarded, 0);
        assert!(close(r.result, r.ground_truth, 1e-9));
    }

    #[test]
    fn rounds_not_above_sk() {
        let mut w = world(8);
        let rounds = measure_bcast_rounds(&mut w, 8, 4).unwrap();
        let sk = measure_bcast_sk(&mut w, 8, SkParams::new(8)).unwrap();
        assert!(rounds.result <= sk.result);
    }

    #[test]
    fn oversized_buffer_is_heap_fault() {
        let mut w = world(2);
        assert!(matches!(
            measure_bcast_naive(&mut w, 1 << 20, 1),
            Err(BenchError::Sim(SimError::HeapFault { .. }))
        ));
    }
}
