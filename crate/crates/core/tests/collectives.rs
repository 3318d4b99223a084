use std::rc::Rc;

use proptest::prelude::*;
use shmemlab::checks::{check_ack_values, check_general};
use shmemlab::coll::{
    isolated_bcast_span, measure_bcast_barrier, measure_bcast_naive, measure_bcast_rounds, measure_bcast_sk,
    measure_bcast_sk_traced, measure_bcast_sync, prepare_sync, SkParams,
};
use shmemlab::netmodel::{ClockModel, NetworkModel};
use shmemlab::sim::{BarrierAlgo, BcastTopology, PeId, World, WorldConfig};
use shmemlab::sync::{estimate_offsets, start_synchronization, stop_synchronization, SyncState};

fn net() -> NetworkModel {
    NetworkModel::logp(2e-7, 2e-7, 1e-6, 1e-7, 1e-9)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-15)
}

#[test]
fn rounds_linear_gap_dominated_by_hand() {
    // o_s = o_r = G = 0, L = 1us, g = 10us. Each root injects three
    // messages g apart; roots hand over as their messages land:
    // root 3 starts at 3g + 3L and its last message lands at 5g + 4L.
    let (l, g) = (1e-6, 1e-5);
    let m = NetworkModel::logp(0.0, 0.0, l, g, 0.0);
    let mut w = World::new(WorldConfig::new(4, m).with_topology(BcastTopology::Linear)).unwrap();
    let r = measure_bcast_rounds(&mut w, 8, 4).unwrap();
    assert!(rel(r.result, (5.0 * g + 4.0 * l) / 4.0) < 1e-9, "{}", r.result);
    assert!(r.per_task.is_none());
}

#[test]
fn naive_linear_root_bound() {
    let m = NetworkModel::logp(1e-7, 1e-7, 1e-6, 1e-6, 0.0);
    let mut w = World::new(WorldConfig::new(4, m).with_topology(BcastTopology::Linear)).unwrap();
    let r = measure_bcast_naive(&mut w, 8, 64).unwrap();
    assert!(rel(r.result, 3.0 * 1e-6) < 0.02, "{}", r.result);
}

#[test]
fn barrier_method_two_pes_symmetric() {
    let mut w = World::new(WorldConfig::new(2, net())).unwrap();
    let r = measure_bcast_barrier(&mut w, 8, 32, 100).unwrap();
    assert!(rel(r.result, r.ground_truth) < 0.02, "{} vs {}", r.result, r.ground_truth);
}

#[test]
fn barrier_method_reduce_broadcast_underestimates() {
    for root in [0, 3] {
        let cfg = WorldConfig::new(4, net()).with_barrier(BarrierAlgo::ReduceBroadcast(PeId(root)));
        let mut w = World::new(cfg).unwrap();
        let r = measure_bcast_barrier(&mut w, 8, 32, 100).unwrap();
        assert!(r.result < 0.99 * r.ground_truth, "root {root}: {} vs {}", r.result, r.ground_truth);
    }
}

#[test]
fn sk_binomial_eight_vs_naive() {
    let mut w = World::new(WorldConfig::new(8, net())).unwrap();
    let sk = measure_bcast_sk(&mut w, 64, SkParams::new(16)).unwrap();
    let naive = measure_bcast_naive(&mut w, 64, 16).unwrap();
    assert!(rel(sk.result, sk.ground_truth) < 0.02);
    assert!(naive.result < naive.ground_truth);
    assert_eq!(sk.per_task.as_ref().unwrap().len(), 7);
    assert!(!sk.flagged);
}

#[test]
fn sk_rt1_reps_one_still_accurate() {
    let mut w = World::new(WorldConfig::new(4, net())).unwrap();
    let p = SkParams {
        m: 8,
        rt1_reps: 1,
        sleep: 0.0,
    };
    let r = measure_bcast_sk(&mut w, 8, p).unwrap();
    assert!(rel(r.result, r.ground_truth) < 0.02);
}

#[test]
fn sync_drift_error_grows_with_run_length() {
    let n = 4;
    let drift = vec![0.0, 1e-5, 1e-5, 1e-5];
    let cfg = WorldConfig::new(n, net()).with_clock(ClockModel::perfect(n).with_drift(drift));
    let mut errs = Vec::new();
    for iters in [10, 1000] {
        let mut w = World::new(cfg.clone()).unwrap();
        let mut s = prepare_sync(&mut w, 8, 8).unwrap();
        let r = measure_bcast_sync(&mut w, 8, iters, &mut s).unwrap();
        errs.push(r.result - r.ground_truth);
    }
    assert!(errs[1] > 10.0 * errs[0].abs(), "{errs:?}");
}

#[test]
fn isolated_span_single_pe_zero() {
    let cfg = WorldConfig::new(1, net());
    assert_eq!(isolated_bcast_span(&cfg, PeId(0), 64).unwrap(), 0.0);
}

/// Global start instants of `windows` consecutive windows on every PE.
fn window_starts(w: &mut World, s: &SyncState, windows: usize) -> Vec<Vec<f64>> {
    let shared = Rc::new(s.clone());
    w.run_each(|pe| {
        let s = shared.clone();
        async move {
            let mut c = s.cursor(pe.id());
            let mut starts = Vec::new();
            for _ in 0..windows {
                start_synchronization(&mut c, &pe).await?;
                starts.push(pe.global_now());
                stop_synchronization(&mut c, &pe).await?;
            }
            Ok(starts)
        }
    })
    .unwrap()
    .results
}

fn spread(starts: &[Vec<f64>], k: usize) -> f64 {
    let ts = starts.iter().map(|s| s[k]);
    ts.clone().fold(f64::MIN, f64::max) - ts.fold(f64::MAX, f64::min)
}

#[test]
fn start_spread_grows_linearly_with_drift() {
    let n = 3;
    let clock = ClockModel::perfect(n).with_drift(vec![0.0, 1e-5, 2e-5]);
    let mut w = World::new(WorldConfig::new(n, net()).with_clock(clock)).unwrap();
    let mut s = estimate_offsets(&mut w, 8).unwrap();
    s.set_window(1e-4).unwrap();
    s.schedule_from_now(&w, 1e-4).unwrap();
    let starts = window_starts(&mut w, &s, 201);
    let (a, b, c) = (spread(&starts, 0), spread(&starts, 100), spread(&starts, 200));
    assert!(b > a && c > b);
    // equal window steps add equal spread
    assert!(rel(c - b, b - a) < 1e-6, "{a} {b} {c}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn start_spread_bounded_by_offset_error(
        offs in proptest::collection::vec(-1e-3f64..1e-3, 3),
        drift in proptest::collection::vec(0.0f64..1e-5, 3),
        jitter in 0.0f64..1e-7,
        seed in any::<u64>(),
    ) {
        let mut offs = offs;
        let mut drift = drift;
        offs[0] = 0.0;
        drift[0] = 0.0;
        let clock = ClockModel::perfect(3).with_offsets(offs).with_drift(drift).with_jitter(jitter, seed);
        let cfg = WorldConfig::new(3, net()).with_clock(clock.clone());
        let mut w = World::new(cfg).unwrap();
        let mut s = estimate_offsets(&mut w, 8).unwrap();
        s.set_window(1e-4).unwrap();
        s.schedule_from_now(&w, 1e-4).unwrap();
        let starts = window_starts(&mut w, &s, 3);
        for k in 0..3 {
            // offset-estimate error at the start of window k, on each PE
            let err = starts
                .iter()
                .enumerate()
                .map(|(p, st)| {
                    let truth = clock.local_time(PeId(p), st[k]).unwrap() - clock.local_time(PeId(0), st[k]).unwrap();
                    (truth - s.offsets[p]).abs()
                })
                .fold(0.0, f64::max);
            prop_assert!(spread(&starts, k) <= 2.0 * err + 2.0 * jitter + 1e-12);
        }
    }

    #[test]
    fn sk_traces_keep_general_invariants(seed in any::<u64>(), p in 2usize..6) {
        let clock = ClockModel::perfect(p).with_jitter(3e-7, seed);
        let mut w = World::new(WorldConfig::new(p, net()).with_clock(clock)).unwrap();
        let (_, trace) = measure_bcast_sk_traced(&mut w, 8, SkParams::new(3)).unwrap();
        prop_assert!(check_ack_values(&trace).is_empty());
        prop_assert!(check_general(&trace).is_empty());
    }
}
