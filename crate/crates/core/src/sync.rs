//! Clock-offset estimation, window-based start synchronization and barrier
//! timing, all run as PE programs.

use crate::sim::{Pe, PeId, SimError, World};
use crate::BenchError;

pub const DEFAULT_PING_REPS: usize = 16;
pub const DEFAULT_BARRIER_REPS: usize = 100;
/// Window length as a multiple of the pilot estimate.
pub const WINDOW_FACTOR: f64 = 10.0;

/// Offsets are relative to PE 0's clock: `offsets[p] = local_p - local_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    pub offsets: Vec<f64>,
    pub window_len: f64,
    /// Local time on each PE at which its next window opens.
    pub next_slot_start: Vec<f64>,
    /// PE 0 local time of the exchange each offset was taken from.
    pub estimated_at: Vec<f64>,
}

impl SyncState {
    /// Places the first window `lead` seconds after the current instant as
    /// seen by PE 0.
    pub fn schedule_from_now(&mut self, world: &World, lead: f64) -> Result<(), SimError> {
        let origin = world.config().clock.local_time(PeId(0), world.now())? + lead;
        self.next_slot_start = self.offsets.iter().map(|o| origin + o).collect();
        Ok(())
    }

    pub fn set_window(&mut self, window_len: f64) -> Result<(), BenchError> {
        if !(window_len > 0.0) || !window_len.is_finite() {
            return Err(BenchError::Invalid(format!("window length {window_len} must be > 0")));
        }
        self.window_len = window_len;
        Ok(())
    }

    pub fn cursor(&self, pe: PeId) -> SyncCursor {
        SyncCursor {
            next: self.next_slot_start[pe.0],
            window: self.window_len,
        }
    }

    /// Moves every PE past `windows` consumed windows.
    pub fn advance(&mut self, windows: usize) {
        for s in &mut self.next_slot_start {
            *s += windows as f64 * self.window_len;
        }
    }

    /// Start of window `k` (counted from the current schedule) in PE 0's clock.
    pub fn slot(&self, k: usize) -> f64 {
        self.next_slot_start[0] + k as f64 * self.window_len
    }
}

/// One PE's view of the window schedule during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncCursor {
    next: f64,
    window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncStart {
    pub t1: f64,
    /// The window had already opened when this PE got there.
    pub overrun: bool,
}

/// Waits for the next window to open and returns the local start timestamp.
pub async fn start_synchronization(cursor: &mut SyncCursor, pe: &Pe) -> Result<SyncStart, SimError> {
    let on_time = pe.sleep_until_local(cursor.next).await?;
    let t1 = pe.timer().await?;
    Ok(SyncStart { t1, overrun: !on_time })
}

/// Returns the local end timestamp and moves to the following window.
pub async fn stop_synchronization(cursor: &mut SyncCursor, pe: &Pe) -> Result<f64, SimError> {
    let t2 = pe.timer().await?;
    cursor.next += cursor.window;
    Ok(t2)
}

/// PE 0 pings every other PE `reps` times; each offset comes from the
/// exchange with the smallest round trip, using the midpoint of that
/// exchange as the instant the remote clock was read. Each ping waits as
/// long as the previous round trip took, so that a ping held back by the
/// injection gap is followed by one that leaves an idle NIC.
pub fn estimate_offsets(world: &mut World, reps: usize) -> Result<SyncState, BenchError> {
    if reps == 0 {
        return Err(BenchError::Invalid("offset estimation needs at least one exchange".into()));
    }
    let n = world.npes();
    let out = world.run_each(move |pe| async move {
        let mut est = vec![(0.0, 0.0); n];
        if pe.id() != PeId(0) {
            return Ok(est);
        }
        let mut pause = 0.0;
        for (p, slot) in est.iter_mut().enumerate().skip(1) {
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for _ in 0..reps {
                if pause > 0.0 {
                    pe.sleep_until_local(pe.local_now()? + pause).await?;
                }
                let t_send = pe.timer().await?;
                let remote = pe.remote_clock(PeId(p)).await?;
                let t_recv = pe.timer().await?;
                let rtt = t_recv - t_send;
                pause = rtt;
                if rtt < best.0 {
                    let mid = 0.5 * (t_send + t_recv);
                    best = (rtt, remote - mid, mid);
                }
            }
            *slot = (best.1, best.2);
        }
        Ok::<_, SimError>(est)
    })?;
    let est = &out.results[0];
    Ok(SyncState {
        offsets: est.iter().map(|e| e.0).collect(),
        window_len: 1.0,
        next_slot_start: vec![0.0; n],
        estimated_at: est.iter().map(|e| e.1).collect(),
    })
}

/// Mean duration of `reps` back-to-back barriers, timed on PE 0 around the
/// whole loop.
pub fn measure_barrier_time(world: &mut World, reps: usize) -> Result<f64, BenchError> {
    Ok(measure_barrier_with_truth(world, reps)?.0)
}

/// As [`measure_barrier_time`], also returning the mean true barrier span.
pub fn measure_barrier_with_truth(world: &mut World, reps: usize) -> Result<(f64, f64), BenchError> {
    if reps == 0 {
        return Err(BenchError::Invalid("barrier timing needs at least one barrier".into()));
    }
    let out = world.run_each(move |pe| async move {
        pe.barrier().await?;
        let t1 = pe.timer().await?;
        for _ in 0..reps {
            pe.barrier().await?;
        }
        let t2 = pe.timer().await?;
        Ok::<_, SimError>((t2 - t1) / reps as f64)
    })?;
    let spans: Vec<f64> = out
        .trace
        .barrier_instances()
        .into_iter()
        .skip(1)
        .map(|i| out.trace.barrier_span(i))
        .collect::<Result<_, _>>()?;
    let truth = spans.iter().sum::<f64>() / spans.len() as f64;
    Ok((out.results[0], truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{ClockModel, NetworkModel};
    use crate::sim::{BarrierAlgo, WorldConfig};

    fn net() -> NetworkModel {
        NetworkModel::logp(1e-7, 1e-7, 1e-6, 0.0, 0.0)
    }

    fn world(clock: ClockModel) -> World {
        let n = clock.npes();
        World::new(WorldConfig::new(n, net()).with_clock(clock)).unwrap()
    }

    #[test]
    fn perfect_clocks_give_zero_offsets() {
        let mut w = world(ClockModel::perfect(4));
        let s = estimate_offsets(&mut w, DEFAULT_PING_REPS).unwrap();
        assert_eq!(s.offsets, vec![0.0; 4]);
    }

    #[test]
    fn constant_offset_recovered_exactly() {
        let mut w = world(ClockModel::perfect(3).with_offsets(vec![0.0, 5e-4, -2e-4]));
        let s = estimate_offsets(&mut w, 4).unwrap();
        assert!((s.offsets[1] - 5e-4).abs() < 1e-15);
        assert!((s.offsets[2] + 2e-4).abs() < 1e-15);
    }

    #[test]
    fn drift_error_grows_with_time() {
        let drift = 1e-6;
        let mut w = world(ClockModel::perfect(2).with_drift(vec![0.0, drift]));
        let s = estimate_offsets(&mut w, 4).unwrap();
        // the estimate equals the true offset at the instant it was taken
        assert!((s.offsets[1] - drift * s.estimated_at[1]).abs() < 1e-15);
        // at time t the error is drift * (t - estimated_at)
        let t = 1.0;
        let truth = drift * t;
        assert!(((truth - s.offsets[1]) - drift * (t - s.estimated_at[1])).abs() < 1e-15);
    }

    #[test]
    fn windows_start_together_with_perfect_clocks() {
        let mut w = world(ClockModel::perfect(4).with_offsets(vec![0.0, 1e-3, 2e-3, -1e-3]));
        let mut s = estimate_offsets(&mut w, 4).unwrap();
        s.set_window(1e-5).unwrap();
        s.schedule_from_now(&w, 1e-5).unwrap();
        let shared = std::rc::Rc::new(s.clone());
        let out = w
            .run_each(|pe| {
                let s = shared.clone();
                async move {
                    let mut c = s.cursor(pe.id());
                    let mut starts = Vec::new();
                    for _ in 0..3 {
                        let st = start_synchronization(&mut c, &pe).await?;
                        assert!(!st.overrun);
                        starts.push(pe.global_now());
                        stop_synchronization(&mut c, &pe).await?;
                    }
                    Ok(starts)
                }
            })
            .unwrap();
        for k in 0..3 {
            let t0 = out.results[0][k];
            assert!(out.results.iter().all(|r| (r[k] - t0).abs() < 1e-15));
        }
    }

    #[test]
    fn overrun_is_flagged() {
        let mut w = world(ClockModel::perfect(2));
        let mut s = estimate_offsets(&mut w, 2).unwrap();
        s.set_window(1e-7).unwrap();
        s.schedule_from_now(&w, 1e-6).unwrap();
        let shared = std::rc::Rc::new(s);
        let out = w
            .run_each(|pe| {
                let s = shared.clone();
                async move {
                    let mut c = s.cursor(pe.id());
                    start_synchronization(&mut c, &pe).await?;
                    pe.barrier().await?;
                    stop_synchronization(&mut c, &pe).await?;
                    Ok(start_synchronization(&mut c, &pe).await?.overrun)
                }
            })
            .unwrap();
        assert!(out.results.iter().all(|&o| o));
    }

    #[test]
    fn barrier_time_dissemination_four() {
        let mut w = world(ClockModel::perfect(4));
        let (m, truth) = measure_barrier_with_truth(&mut w, DEFAULT_BARRIER_REPS).unwrap();
        assert!((m - 2.4e-6).abs() < 1e-15, "{m}");
        assert!((truth - 2.4e-6).abs() < 1e-15);
    }

    #[test]
    fn barrier_time_single_pe() {
        let mut w = world(ClockModel::perfect(1));
        assert_eq!(measure_barrier_time(&mut w, 10).unwrap(), 0.0);
    }

    #[test]
    fn reduce_broadcast_barrier_slower() {
        let cfg = WorldConfig::new(8, net()).with_barrier(BarrierAlgo::ReduceBroadcast(PeId(0)));
        let mut rb = World::new(cfg).unwrap();
        let mut d = world(ClockModel::perfect(8));
        assert!(measure_barrier_time(&mut rb, 20).unwrap() > measure_barrier_time(&mut d, 20).unwrap());
    }
}
