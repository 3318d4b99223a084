//! Global lock measurements.

use crate::sim::{EventKind, GroundTruthTrace, OpKind, Pe, PeId, SimError, World};
use crate::BenchError;

/// Lock word offset.
pub const LOCK: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    UncontendedSetClear,
    /// `holders` other PEs queue for the lock ahead of the requester.
    ContendedSet(usize),
    TestHeld,
    TestFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockScenario {
    pub mode: LockMode,
    pub home: PeId,
    pub requester: PeId,
}

impl LockScenario {
    pub fn new(mode: LockMode, home: PeId, requester: PeId) -> Self {
        Self { mode, home, requester }
    }

    pub fn validate(&self, npes: usize) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Invalid(m));
        if self.home.0 >= npes {
            return bad(format!("lock home {} out of range for {npes} PEs", self.home.0));
        }
        if self.requester.0 >= npes {
            return bad(format!("requester {} out of range for {npes} PEs", self.requester.0));
        }
        match self.mode {
            LockMode::ContendedSet(k) if k == 0 || k >= npes => {
                bad(format!("{k} holders needs 1..{npes} exclusive"))
            }
            LockMode::TestHeld if npes < 2 => bad("a held test needs a second PE".into()),
            _ => Ok(()),
        }
    }

    /// PEs other than the requester that take the lock first, in queue order.
    fn holders(&self, npes: usize) -> Vec<PeId> {
        let k = match self.mode {
            LockMode::ContendedSet(k) => k,
            LockMode::TestHeld => 1,
            _ => 0,
        };
        (0..npes).map(PeId).filter(|&p| p != self.requester).take(k).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockMeasurement {
    pub scenario: LockScenario,
    pub iterations: usize,
    /// Mean timed duration per iteration on the requester.
    pub mean: f64,
    /// Mean true duration of the same calls.
    pub ground_truth: f64,
    /// ContendedSet: mean time from a release reaching the home to the next
    /// holder learning it owns the lock.
    pub handoff: Option<f64>,
    /// Test modes: what every test call returned.
    pub test_results: Vec<bool>,
    pub trace: GroundTruthTrace,
}

async fn requester_loop(pe: &Pe, mode: LockMode, iters: usize, stagger: u64, k: usize) -> Result<(f64, Vec<bool>), SimError> {
    let mut acc = 0.0;
    let mut tests = Vec::new();
    match mode {
        LockMode::UncontendedSetClear => {
            let t1 = pe.timer().await?;
            for _ in 0..iters {
                pe.set_lock(LOCK).await?;
                pe.clear_lock(LOCK).await?;
            }
            acc = pe.timer().await? - t1;
        }
        LockMode::ContendedSet(_) => {
            for _ in 0..iters {
                pe.barrier().await?;
                pe.spin(stagger * k as u64).await?;
                let t1 = pe.timer().await?;
                pe.set_lock(LOCK).await?;
                pe.clear_lock(LOCK).await?;
                acc += pe.timer().await? - t1;
            }
        }
        LockMode::TestHeld | LockMode::TestFree => {
            for _ in 0..iters {
                pe.barrier().await?;
                let t1 = pe.timer().await?;
                let got = pe.test_lock(LOCK).await?;
                acc += pe.timer().await? - t1;
                if got {
                    pe.clear_lock(LOCK).await?;
                }
                tests.push(got);
                pe.barrier().await?;
            }
        }
    }
    Ok((acc / iters as f64, tests))
}

/// Holder `rank` requests `rank` staggers after the barrier and keeps the
/// lock long enough for every later request, the requester's included, to
/// queue behind it.
async fn holder_loop(pe: &Pe, mode: LockMode, iters: usize, stagger: u64, rank: usize, k: usize) -> Result<(), SimError> {
    for _ in 0..iters {
        match mode {
            LockMode::ContendedSet(_) => {
                pe.barrier().await?;
                pe.spin(stagger * rank as u64).await?;
                pe.set_lock(LOCK).await?;
                pe.spin(stagger * (k as u64 + 1)).await?;
                pe.clear_lock(LOCK).await?;
            }
            LockMode::TestHeld => {
                pe.set_lock(LOCK).await?;
                pe.barrier().await?;
                pe.barrier().await?;
                pe.clear_lock(LOCK).await?;
            }
            _ => unreachable!("no holders in {mode:?}"),
        }
    }
    Ok(())
}

async fn bystander_loop(pe: &Pe, mode: LockMode, iters: usize) -> Result<(), SimError> {
    let barriers = match mode {
        LockMode::UncontendedSetClear => 0,
        LockMode::ContendedSet(_) => 1,
        LockMode::TestHeld | LockMode::TestFree => 2,
    };
    for _ in 0..iters * barriers {
        pe.barrier().await?;
    }
    Ok(())
}

fn handoff_latency(trace: &GroundTruthTrace) -> Option<f64> {
    let mut released: Option<f64> = None;
    let mut gaps = Vec::new();
    for e in &trace.entries {
        match e.kind {
            EventKind::LockReleased => released = Some(e.t_global),
            EventKind::LockAcquired => {
                if let Some(r) = released.take() {
                    // only handoffs from the queue, not fresh acquisitions
                    if trace.op(e.op_id).is_some_and(|op| op.called < r) {
                        gaps.push(e.t_global - r);
                    }
                }
            }
            _ => {}
        }
    }
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// True per-iteration duration of the requester's timed calls.
fn truth(trace: &GroundTruthTrace, requester: PeId, mode: LockMode, iters: usize) -> f64 {
    let mine = |kind| {
        trace
            .ops
            .iter()
            .filter(move |o| o.pe == requester && o.kind == kind)
            .collect::<Vec<_>>()
    };
    match mode {
        LockMode::UncontendedSetClear | LockMode::ContendedSet(_) => {
            let sets = mine(OpKind::SetLock);
            let clears = mine(OpKind::ClearLock);
            let total: f64 = sets
                .iter()
                .zip(&clears)
                .map(|(s, c)| c.returned.unwrap_or(f64::NAN) - s.called)
                .sum();
            total / iters as f64
        }
        LockMode::TestHeld | LockMode::TestFree => {
            let total: f64 = mine(OpKind::TestLock).iter().map(|o| o.elapsed().unwrap_or(f64::NAN)).sum();
            total / iters as f64
        }
    }
}

pub fn measure_lock(world: &mut World, scenario: LockScenario, iters: usize) -> Result<LockMeasurement, BenchError> {
    let n = world.npes();
    scenario.validate(n)?;
    if iters == 0 {
        return Err(BenchError::Invalid("iterations must be >= 1".into()));
    }
    world.set_lock_home(LOCK, scenario.home)?;
    let cfg = world.config();
    // one uncontended round trip, in busy-wait units
    let stagger = (cfg.net.round_trip(0) / cfg.busy_unit).ceil().max(1.0) as u64;
    let holders = scenario.holders(n);
    let k = holders.len();
    let mode = scenario.mode;
    let out = world.run_each(|pe| {
        let rank = holders.iter().position(|&h| h == pe.id());
        async move {
            if pe.id() == scenario.requester {
                requester_loop(&pe, mode, iters, stagger, k).await.map(Some)
            } else if let Some(r) = rank {
                holder_loop(&pe, mode, iters, stagger, r, k).await.map(|_| None)
            } else {
                bystander_loop(&pe, mode, iters).await.map(|_| None)
            }
        }
    })?;
    let (mean, test_results) = out.results[scenario.requester.0].clone().expect("requester result");
    let trace = out.trace;
    Ok(LockMeasurement {
        scenario,
        iterations: iters,
        mean,
        ground_truth: truth(&trace, scenario.requester, mode, iters),
        handoff: matches!(mode, LockMode::ContendedSet(_)).then(|| handoff_latency(&trace)).flatten(),
        test_results,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::{check_lock_alternation, check_lock_fifo};
    use crate::netmodel::NetworkModel;
    use crate::sim::WorldConfig;

    fn world(n: usize) -> World {
        World::new(WorldConfig::new(n, NetworkModel::logp(1e-7, 2e-7, 1e-6, 1e-7, 0.0))).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs()
    }

    #[test]
    fn test_free_local_home() {
        let mut w = world(2);
        let s = LockScenario::new(LockMode::TestFree, PeId(0), PeId(0));
        let r = measure_lock(&mut w, s, 4).unwrap();
        assert!(close(r.ground_truth, w.config().net.round_trip(0)));
        assert!(close(r.mean, r.ground_truth));
        assert!(close(r.ground_truth, r.mean));
    }

    #[test]
    fn test_held_returns_false() {
        let mut w = world(3);
        let s = LockScenario::new(LockMode::TestHeld, PeId(1), PeId(2));
        let r = measure_lock(&mut w, s, 4).unwrap();
        assert_eq!(r.test_results, vec![false; 4]);
        assert!(check_lock_alternation(&r.trace).is_empty());
    }

    #[test]
    fn uncontended_remote_is_two_round_trips() {
        let mut w = world(2);
        let s = LockScenario::new(LockMode::UncontendedSetClear, PeId(1), PeId(0));
        let r = measure_lock(&mut w, s, 8).unwrap();
        // request and reply each pay o_s + L + o_r
        let rt = 2.0 * (1e-7 + 1e-6 + 2e-7);
        assert!(close(r.ground_truth, 2.0 * rt), "{}", r.ground_truth);
        assert!(close(r.mean, r.ground_truth));
    }

    #[test]
    fn contended_not_faster_than_uncontended() {
        let mut w = world(4);
        let free = measure_lock(&mut w, LockScenario::new(LockMode::UncontendedSetClear, PeId(0), PeId(3)), 8).unwrap();
        let busy = measure_lock(&mut w, LockScenario::new(LockMode::ContendedSet(1), PeId(0), PeId(3)), 8).unwrap();
        assert!(busy.mean >= free.mean);
        assert!(busy.handoff.unwrap() > 0.0);
        assert!(check_lock_fifo(&busy.trace).is_empty());
        assert!(check_lock_alternation(&busy.trace).is_empty());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut w = world(2);
        assert!(measure_lock(&mut w, LockScenario::new(LockMode::ContendedSet(2), PeId(0), PeId(1)), 1).is_err());
        assert!(measure_lock(&mut w, LockScenario::new(LockMode::TestFree, PeId(5), PeId(1)), 1).is_err());
    }
}
