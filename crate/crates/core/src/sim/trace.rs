//! Ground-truth event log written by the simulator.
//!
//! Every runtime call is registered as an [`OpRecord`] with its true call and
//! return instants, and the notable moments of its life (posting, local and
//! remote completion, collective entry/exit, ...) are appended to the entry
//! list in the order the simulator processed them.

use std::fmt::{self, Write as _};

use super::{PeId, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Post,
    LocalComplete,
    RemoteDelivered,
    QuietDone,
    BarrierEnter,
    BarrierExit,
    BcastEnter,
    BcastExit,
    LockEnqueued,
    LockAcquired,
    LockReleased,
    AckInc,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Post => "post",
            EventKind::LocalComplete => "local_complete",
            EventKind::RemoteDelivered => "remote_delivered",
            EventKind::QuietDone => "quiet_done",
            EventKind::BarrierEnter => "barrier_enter",
            EventKind::BarrierExit => "barrier_exit",
            EventKind::BcastEnter => "bcast_enter",
            EventKind::BcastExit => "bcast_exit",
            EventKind::LockEnqueued => "lock_enqueued",
            EventKind::LockAcquired => "lock_acquired",
            EventKind::LockReleased => "lock_released",
            EventKind::AckInc => "ack_inc",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub t_global: f64,
    pub pe: PeId,
    pub kind: EventKind,
    pub op_id: u64,
    /// Cell value after an atomic increment; lock word offset for lock events.
    pub value: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Put,
    Get,
    PutNbi,
    GetNbi,
    Quiet,
    FetchInc,
    RemoteClock,
    SetLock,
    TestLock,
    ClearLock,
}

impl OpKind {
    pub fn is_rma(self) -> bool {
        matches!(self, OpKind::Put | OpKind::Get | OpKind::PutNbi | OpKind::GetNbi)
    }
}

/// One runtime call with its true timing.
#[derive(Debug, Clone, PartialEq)]
pub struct OpRecord {
    pub id: u64,
    pub pe: PeId,
    pub kind: OpKind,
    pub target: Option<PeId>,
    pub nbytes: usize,
    pub called: f64,
    pub returned: Option<f64>,
    pub delivered: Option<f64>,
}

impl OpRecord {
    pub fn elapsed(&self) -> Option<f64> {
        self.returned.map(|r| r - self.called)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveKind {
    Barrier,
    Broadcast { root: PeId },
}

/// Identity of the k-th collective call; matched across all PEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectiveRecord {
    pub instance: u64,
    pub kind: CollectiveKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthTrace {
    pub entries: Vec<TraceEntry>,
    pub ops: Vec<OpRecord>,
    pub collectives: Vec<CollectiveRecord>,
}

/// Constructs whose true duration can be read back from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruthQuery {
    OpElapsed(u64),
    BcastSpan(u64),
    BarrierSpan(u64),
    QuietElapsed(u64),
}

impl GroundTruthTrace {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn op(&self, id: u64) -> Option<&OpRecord> {
        self.ops
            .binary_search_by_key(&id, |o| o.id)
            .ok()
            .map(|i| &self.ops[i])
    }

    pub fn ops_of(&self, kind: OpKind) -> impl Iterator<Item = &OpRecord> {
        self.ops.iter().filter(move |o| o.kind == kind)
    }

    pub fn entries_of(&self, kind: EventKind) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn broadcast_instances(&self) -> Vec<u64> {
        self.collectives
            .iter()
            .filter(|c| matches!(c.kind, CollectiveKind::Broadcast { .. }))
            .map(|c| c.instance)
            .collect()
    }

    pub fn barrier_instances(&self) -> Vec<u64> {
        self.collectives
            .iter()
            .filter(|c| c.kind == CollectiveKind::Barrier)
            .map(|c| c.instance)
            .collect()
    }

    fn collective(&self, instance: u64) -> Option<&CollectiveRecord> {
        self.collectives.iter().find(|c| c.instance == instance)
    }

    fn instance_times(&self, kind: EventKind, instance: u64) -> impl Iterator<Item = &TraceEntry> {
        self.entries
            .iter()
            .filter(move |e| e.kind == kind && e.op_id == instance)
    }

    /// `max_pe(exit) - root enter` for broadcast `instance`.
    pub fn bcast_span(&self, instance: u64) -> Result<f64, SimError> {
        let missing = || SimError::MissingInstance(format!("broadcast {instance}"));
        let root = match self.collective(instance).map(|c| c.kind) {
            Some(CollectiveKind::Broadcast { root }) => root,
            _ => return Err(missing()),
        };
        let enter = self
            .instance_times(EventKind::BcastEnter, instance)
            .find(|e| e.pe == root)
            .ok_or_else(missing)?
            .t_global;
        let exit = self
            .instance_times(EventKind::BcastExit, instance)
            .map(|e| e.t_global)
            .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))))
            .ok_or_else(missing)?;
        Ok(exit - enter)
    }

    /// Time from the last arrival to the last departure of barrier `instance`.
    pub fn barrier_span(&self, instance: u64) -> Result<f64, SimError> {
        let missing = || SimError::MissingInstance(format!("barrier {instance}"));
        let last = |kind| {
            self.instance_times(kind, instance)
                .map(|e| e.t_global)
                .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))))
        };
        match (last(EventKind::BarrierEnter), last(EventKind::BarrierExit)) {
            (Some(enter), Some(exit)) => Ok(exit - enter),
            _ => Err(missing()),
        }
    }

    /// Writes `t_global<TAB>pe<TAB>kind<TAB>op_id` lines.
    pub fn export(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 40);
        for e in &self.entries {
            let _ = writeln!(out, "{:.15e}\t{}\t{}\t{}", e.t_global, e.pe.0, e.kind, e.op_id);
        }
        out
    }
}

/// True global-time duration of a construct recorded in `trace`.
pub fn extract_ground_truth(trace: &GroundTruthTrace, query: GroundTruthQuery) -> Result<f64, SimError> {
    match query {
        GroundTruthQuery::OpElapsed(id) => trace
            .op(id)
            .and_then(OpRecord::elapsed)
            .ok_or_else(|| SimError::MissingInstance(format!("op {id}"))),
        GroundTruthQuery::QuietElapsed(id) => match trace.op(id) {
            Some(op) if op.kind == OpKind::Quiet => op
                .elapsed()
                .ok_or_else(|| SimError::MissingInstance(format!("quiet {id}"))),
            _ => Err(SimError::MissingInstance(format!("quiet {id}"))),
        },
        GroundTruthQuery::BcastSpan(i) => trace.bcast_span(i),
        GroundTruthQuery::BarrierSpan(i) => trace.barrier_span(i),
    }
}
