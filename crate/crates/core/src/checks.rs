//! Trace invariant checks. Each returns the list of violations found.

use std::collections::BTreeMap;

use crate::sim::{EventKind, GroundTruthTrace, OpKind, PeId};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub check: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(check: &'static str, detail: String) -> Self {
        Self { check, detail }
    }
}

/// Per RMA op: post precedes local completion and remote delivery, and a
/// blocking call returns no earlier than it was called.
pub fn check_op_ordering(trace: &GroundTruthTrace) -> Vec<Violation> {
    let mut post: BTreeMap<u64, f64> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &trace.entries {
        match e.kind {
            EventKind::Post => {
                post.insert(e.op_id, e.t_global);
            }
            EventKind::LocalComplete | EventKind::RemoteDelivered => {
                if let Some(&p) = post.get(&e.op_id) {
                    if e.t_global < p {
                        out.push(Violation::new(
                            "op_ordering",
                            format!("op {} {} at {:e} before post at {p:e}", e.op_id, e.kind, e.t_global),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    for op in &trace.ops {
        if let Some(r) = op.returned {
            if r < op.called {
                out.push(Violation::new(
                    "op_ordering",
                    format!("op {} returned at {r:e} before call at {:e}", op.id, op.called),
                ));
            }
        }
    }
    out
}

/// Every RMA op a PE issued before calling quiet is delivered by the time
/// that quiet returns.
pub fn check_quiet_completeness(trace: &GroundTruthTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    for q in trace.ops_of(OpKind::Quiet) {
        let Some(done) = q.returned else { continue };
        for op in trace.ops.iter().filter(|o| o.pe == q.pe && o.kind.is_rma() && o.id < q.id) {
            match op.delivered {
                Some(d) if d <= done => {}
                d => out.push(Violation::new(
                    "quiet_completeness",
                    format!("op {} on {:?} delivered at {d:?}, quiet {} returned at {done:e}", op.id, q.pe, q.id),
                )),
            }
        }
    }
    out
}

/// Acknowledgment cells only ever go from 0 to 1: no increment finds a
/// cell that was already incremented and not yet reset.
pub fn check_ack_values(trace: &GroundTruthTrace) -> Vec<Violation> {
    trace
        .entries_of(EventKind::AckInc)
        .filter(|e| !matches!(e.value, Some(0) | Some(1)))
        .map(|e| {
            Violation::new(
                "ack_values",
                format!("ack on {:?} reached {:?} at {:e}", e.pe, e.value, e.t_global),
            )
        })
        .collect()
}

/// Broadcast `i` has exited on every PE before any PE enters broadcast `i+1`.
pub fn check_bcast_non_interleaving(trace: &GroundTruthTrace) -> Vec<Violation> {
    let instances = trace.broadcast_instances();
    let times = |kind: EventKind, inst: u64| {
        trace
            .entries
            .iter()
            .filter(move |e| e.kind == kind && e.op_id == inst)
            .map(|e| (e.t_global, e.pe))
    };
    let mut out = Vec::new();
    for w in instances.windows(2) {
        let last_exit = times(EventKind::BcastExit, w[0]).fold((f64::MIN, PeId(0)), |a, b| if b.0 > a.0 { b } else { a });
        let first_enter = times(EventKind::BcastEnter, w[1]).fold((f64::MAX, PeId(0)), |a, b| if b.0 < a.0 { b } else { a });
        if first_enter.0 <= last_exit.0 {
            out.push(Violation::new(
                "bcast_non_interleaving",
                format!(
                    "{:?} entered broadcast {} at {:e} before {:?} exited broadcast {} at {:e}",
                    first_enter.1, w[1], first_enter.0, last_exit.1, w[0], last_exit.0
                ),
            ));
        }
    }
    out
}

/// Per lock word: acquisitions and releases alternate, and the releasing PE
/// is the one that last acquired.
pub fn check_lock_alternation(trace: &GroundTruthTrace) -> Vec<Violation> {
    let mut holder: BTreeMap<i64, Option<PeId>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &trace.entries {
        let Some(word) = e.value else { continue };
        let h = holder.entry(word).or_default();
        match e.kind {
            EventKind::LockAcquired => {
                if let Some(prev) = *h {
                    out.push(Violation::new(
                        "lock_alternation",
                        format!("{:?} acquired lock {word} at {:e} while {prev:?} held it", e.pe, e.t_global),
                    ));
                }
                *h = Some(e.pe);
            }
            EventKind::LockReleased => {
                if *h != Some(e.pe) {
                    out.push(Violation::new(
                        "lock_alternation",
                        format!("{:?} released lock {word} at {:e}, holder was {h:?}", e.pe, e.t_global),
                    ));
                }
                *h = None;
            }
            _ => {}
        }
    }
    out
}

/// Per lock word: locks are granted in the order requests reached the home.
pub fn check_lock_fifo(trace: &GroundTruthTrace) -> Vec<Violation> {
    let mut enq: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
    let mut acq: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
    for e in &trace.entries {
        let Some(word) = e.value else { continue };
        match e.kind {
            EventKind::LockEnqueued => enq.entry(word).or_default().push(e.op_id),
            EventKind::LockAcquired => acq.entry(word).or_default().push(e.op_id),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (word, q) in &enq {
        let a = acq.get(word).map(Vec::as_slice).unwrap_or(&[]);
        if !q.starts_with(a) {
            out.push(Violation::new(
                "lock_fifo",
                format!("lock {word}: enqueued {q:?}, acquired {a:?}"),
            ));
        }
    }
    for word in acq.keys().filter(|w| !enq.contains_key(w)) {
        out.push(Violation::new("lock_fifo", format!("lock {word} acquired without a request")));
    }
    out
}

/// The checks that hold for every program.
pub fn check_general(trace: &GroundTruthTrace) -> Vec<Violation> {
    let mut v = check_op_ordering(trace);
    v.extend(check_quiet_completeness(trace));
    v.extend(check_lock_alternation(trace));
    v.extend(check_lock_fifo(trace));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TraceEntry;

    fn entry(t: f64, pe: usize, kind: EventKind, op: u64, value: Option<i64>) -> TraceEntry {
        TraceEntry {
            t_global: t,
            pe: PeId(pe),
            kind,
            op_id: op,
            value,
        }
    }

    fn trace(entries: Vec<TraceEntry>) -> GroundTruthTrace {
        GroundTruthTrace {
            entries,
            ..Default::default()
        }
    }

    #[test]
    fn double_ack_detected() {
        let t = trace(vec![
            entry(1.0, 0, EventKind::AckInc, 1, Some(1)),
            entry(2.0, 0, EventKind::AckInc, 2, Some(2)),
        ]);
        assert_eq!(check_ack_values(&t).len(), 1);
    }

    #[test]
    fn overlapping_holders_detected() {
        let t = trace(vec![
            entry(1.0, 1, EventKind::LockAcquired, 1, Some(0)),
            entry(2.0, 2, EventKind::LockAcquired, 2, Some(0)),
        ]);
        assert_eq!(check_lock_alternation(&t).len(), 1);
    }

    #[test]
    fn release_by_other_pe_detected() {
        let t = trace(vec![
            entry(1.0, 1, EventKind::LockAcquired, 1, Some(0)),
            entry(2.0, 2, EventKind::LockReleased, 2, Some(0)),
        ]);
        assert_eq!(check_lock_alternation(&t).len(), 1);
    }

    #[test]
    fn out_of_order_grant_detected() {
        let t = trace(vec![
            entry(1.0, 1, EventKind::LockEnqueued, 1, Some(0)),
            entry(1.5, 2, EventKind::LockEnqueued, 2, Some(0)),
            entry(2.0, 2, EventKind::LockAcquired, 2, Some(0)),
        ]);
        assert_eq!(check_lock_fifo(&t).len(), 1);
    }

    #[test]
    fn post_after_completion_detected() {
        let t = trace(vec![
            entry(2.0, 0, EventKind::Post, 7, None),
            entry(1.0, 0, EventKind::LocalComplete, 7, None),
        ]);
        assert_eq!(check_op_ordering(&t).len(), 1);
    }

    #[test]
    fn disjoint_broadcasts_pass() {
        use crate::sim::{CollectiveKind, CollectiveRecord};
        let mut t = trace(vec![
            entry(0.0, 0, EventKind::BcastEnter, 0, None),
            entry(0.0, 1, EventKind::BcastEnter, 0, None),
            entry(1.0, 0, EventKind::BcastExit, 0, None),
            entry(2.0, 1, EventKind::BcastExit, 0, None),
            entry(3.0, 0, EventKind::BcastEnter, 1, None),
            entry(3.0, 1, EventKind::BcastEnter, 1, None),
        ]);
        t.collectives = (0..2)
            .map(|i| CollectiveRecord {
                instance: i,
                kind: CollectiveKind::Broadcast { root: PeId(0) },
            })
            .collect();
        assert!(check_bcast_non_interleaving(&t).is_empty());
        t.entries[4].t_global = 1.5;
        assert_eq!(check_bcast_non_interleaving(&t).len(), 1);
    }
}
