use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pe::{Cmp, Pe};
use super::trace::{
    CollectiveKind, CollectiveRecord, EventKind, GroundTruthTrace, OpKind, OpRecord, TraceEntry,
};
use super::{BlockedPe, PeId, SimError, WorldConfig};

/// Control-message tag: (collective instance, protocol phase, round).
pub(crate) type Tag = (u64, u8, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LockAction {
    Set,
    Test,
    Clear,
}

#[derive(Debug)]
pub(crate) enum Event {
    Resume(PeId),
    Mark {
        pe: PeId,
        kind: EventKind,
        op: u64,
    },
    PutArrive {
        op: u64,
        src: PeId,
        target: PeId,
        offset: usize,
        data: Vec<u8>,
    },
    GetServe {
        op: u64,
        src: PeId,
        target: PeId,
        offset: usize,
        nbytes: usize,
    },
    GetArrive {
        op: u64,
        src: PeId,
        offset: usize,
        data: Vec<u8>,
    },
    AtomicApply {
        op: u64,
        src: PeId,
        target: PeId,
        offset: usize,
    },
    ClockServe {
        op: u64,
        src: PeId,
        target: PeId,
    },
    Reply {
        op: u64,
        dst: PeId,
        value: Reply,
        trace: Option<(EventKind, i64)>,
    },
    CtrlArrive {
        dst: PeId,
        tag: Tag,
        data: Option<(usize, Vec<u8>)>,
    },
    LockArrive {
        op: u64,
        src: PeId,
        home: PeId,
        offset: usize,
        action: LockAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Reply {
    Unit,
    Int(i64),
    Time(f64),
    Flag(bool),
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PeStatus {
    Idle,
    Running,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Block {
    Sleep,
    Op(u64),
    Delivered(u64),
    Quiet,
    WaitUntil { offset: usize, cmp: Cmp, value: i64 },
    Ctrl { tag: Tag, count: u32 },
}

#[derive(Debug)]
pub(crate) enum Deferred {
    Put { target: PeId, offset: usize, data: Vec<u8> },
    Get { target: PeId, offset: usize, nbytes: usize },
}

#[derive(Debug)]
pub(crate) struct PendingOp {
    pub op: u64,
    pub deferred: Option<Deferred>,
}

pub(crate) struct PeSlot {
    status: PeStatus,
    pub block: Option<Block>,
    wake_scheduled: bool,
    pub pending: Vec<PendingOp>,
    pub replies: BTreeMap<u64, Reply>,
}

#[derive(Debug, Default)]
pub(crate) struct LockState {
    pub holder: Option<PeId>,
    pub queue: VecDeque<(PeId, u64)>,
}

pub(crate) struct State {
    pub cfg: WorldConfig,
    pub now: f64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    pub heaps: Vec<Vec<u8>>,
    heap_top: usize,
    nic_free: Vec<f64>,
    pub pes: Vec<PeSlot>,
    running: bool,
    rng: ChaCha8Rng,
    pub trace: GroundTruthTrace,
    pub coll_seq: Vec<u64>,
    pub ctrl: BTreeMap<(PeId, Tag), u32>,
    pub locks: BTreeMap<usize, LockState>,
    pub lock_homes: BTreeMap<usize, PeId>,
}

impl State {
    pub fn check_running(&self, pe: PeId) -> Result<(), SimError> {
        match self.pes.get(pe.0) {
            Some(slot) if self.running && slot.status == PeStatus::Running => Ok(()),
            Some(_) => Err(SimError::NotRunning),
            None => Err(SimError::UnknownPe(pe)),
        }
    }

    pub fn check_pe(&self, pe: PeId) -> Result<(), SimError> {
        if pe.0 < self.cfg.npes {
            Ok(())
        } else {
            Err(SimError::UnknownPe(pe))
        }
    }

    pub fn check_range(&self, pe: PeId, offset: usize, len: usize) -> Result<(), SimError> {
        self.check_pe(pe)?;
        let heap = self.cfg.heap_bytes;
        match offset.checked_add(len) {
            Some(end) if end <= heap => Ok(()),
            _ => Err(SimError::HeapFault {
                pe,
                offset,
                len,
                heap,
            }),
        }
    }

    pub fn check_cell(&self, pe: PeId, offset: usize) -> Result<(), SimError> {
        if offset % 8 != 0 {
            return Err(SimError::Misaligned(offset));
        }
        self.check_range(pe, offset, 8)
    }

    pub fn schedule(&mut self, time: f64, event: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled { time, seq, event });
    }

    pub fn record(&mut self, pe: PeId, kind: EventKind, op_id: u64, value: Option<i64>) {
        self.trace.entries.push(TraceEntry {
            t_global: self.now,
            pe,
            kind,
            op_id,
            value,
        });
    }

    pub fn new_op(&mut self, pe: PeId, kind: OpKind, target: Option<PeId>, nbytes: usize) -> u64 {
        let id = self.trace.ops.last().map_or(0, |o| o.id + 1);
        self.trace.ops.push(OpRecord {
            id,
            pe,
            kind,
            target,
            nbytes,
            called: self.now,
            returned: None,
            delivered: None,
        });
        id
    }

    fn op_mut(&mut self, id: u64) -> &mut OpRecord {
        let idx = self
            .trace
            .ops
            .binary_search_by_key(&id, |o| o.id)
            .expect("op id registered at creation");
        &mut self.trace.ops[idx]
    }

    pub fn finish_op(&mut self, id: u64) {
        let now = self.now;
        self.op_mut(id).returned = Some(now);
    }

    fn deliver_op(&mut self, id: u64) {
        let now = self.now;
        self.op_mut(id).delivered = Some(now);
    }

    pub fn load_cell(&self, pe: PeId, offset: usize) -> i64 {
        let bytes: [u8; 8] = self.heaps[pe.0][offset..offset + 8].try_into().expect("8-byte cell");
        i64::from_le_bytes(bytes)
    }

    pub fn store_cell(&mut self, pe: PeId, offset: usize, value: i64) {
        self.heaps[pe.0][offset..offset + 8].copy_from_slice(&value.to_le_bytes());
    }

    pub fn snapshot(&self, pe: PeId, offset: usize, len: usize) -> Vec<u8> {
        self.heaps[pe.0][offset..offset + len].to_vec()
    }

    fn write_remote(&mut self, pe: PeId, offset: usize, data: &[u8]) {
        self.heaps[pe.0][offset..offset + data.len()].copy_from_slice(data);
        self.recheck_waiter(pe);
    }

    fn recheck_waiter(&mut self, pe: PeId) {
        if let Some(Block::WaitUntil { offset, cmp, value }) = self.pes[pe.0].block {
            if cmp.eval(self.load_cell(pe, offset), value) {
                self.wake(pe);
            }
        }
    }

    fn jittered_latency(&mut self) -> f64 {
        let w = self.cfg.clock.jitter;
        let l = self.cfg.net.latency;
        if w > 0.0 {
            (l + self.rng.gen_range(-w..=w)).max(0.0)
        } else {
            l
        }
    }

    /// Puts a message on the wire. `ready` is when the sender is done with
    /// its send overhead. PE-initiated injections respect the gap `g`; NIC
    /// responses (`throttle == false`) do not. Returns
    /// `(local completion, arrival incl. receive overhead)`.
    pub fn inject(&mut self, src: PeId, ready: f64, nbytes: usize, throttle: bool) -> (f64, f64) {
        let net = &self.cfg.net;
        let wire = net.per_byte * nbytes as f64;
        let dep = if throttle { ready.max(self.nic_free[src.0]) } else { ready };
        if throttle {
            self.nic_free[src.0] = dep + net.gap.max(wire);
        }
        let o_r = net.o_r;
        let lat = self.jittered_latency();
        (dep + wire, dep + wire + lat + o_r)
    }

    /// Schedules a resume of `pe` at the current instant unless one is pending.
    pub fn wake(&mut self, pe: PeId) {
        let slot = &mut self.pes[pe.0];
        if !slot.wake_scheduled {
            slot.wake_scheduled = true;
            slot.block = None;
            let now = self.now;
            self.schedule(now, Event::Resume(pe));
        }
    }

    pub fn sleep(&mut self, pe: PeId, until: f64) {
        let slot = &mut self.pes[pe.0];
        debug_assert!(!slot.wake_scheduled, "{pe} already has a pending resume");
        slot.wake_scheduled = true;
        slot.block = Some(Block::Sleep);
        self.schedule(until, Event::Resume(pe));
    }

    pub fn block_satisfied(&self, pe: PeId, block: &Block) -> bool {
        let slot = &self.pes[pe.0];
        match block {
            Block::Sleep => false,
            Block::Op(op) => slot.replies.contains_key(op),
            Block::Delivered(op) => !slot.pending.iter().any(|p| p.op == *op),
            Block::Quiet => slot.pending.is_empty(),
            Block::WaitUntil { offset, cmp, value } => cmp.eval(self.load_cell(pe, *offset), *value),
            Block::Ctrl { tag, count } => self.ctrl.get(&(pe, *tag)).copied().unwrap_or(0) >= *count,
        }
    }

    pub fn begin_collective(&mut self, pe: PeId, kind: CollectiveKind) -> Result<u64, SimError> {
        let instance = self.coll_seq[pe.0];
        self.coll_seq[pe.0] += 1;
        match self.trace.collectives.iter().rev().find(|c| c.instance == instance) {
            Some(rec) if rec.kind != kind => Err(SimError::CollectiveMismatch {
                instance,
                pe,
                expected: rec.kind,
                found: kind,
            }),
            Some(_) => Ok(instance),
            None => {
                self.trace.collectives.push(CollectiveRecord { instance, kind });
                Ok(instance)
            }
        }
    }

    pub fn lock_home(&self, offset: usize) -> PeId {
        self.lock_homes.get(&offset).copied().unwrap_or(PeId(0))
    }

    /// Starts an OnQuiet transfer that was held back at post time.
    pub fn dispatch_deferred(&mut self, pe: PeId, op: u64, ready: f64, d: Deferred) {
        match d {
            Deferred::Put { target, offset, data } => {
                let (local, arrive) = self.inject(pe, ready, data.len(), true);
                self.schedule(
                    local,
                    Event::Mark {
                        pe,
                        kind: EventKind::LocalComplete,
                        op,
                    },
                );
                self.schedule(
                    arrive,
                    Event::PutArrive {
                        op,
                        src: pe,
                        target,
                        offset,
                        data,
                    },
                );
            }
            Deferred::Get { target, offset, nbytes } => {
                let (_, arrive) = self.inject(pe, ready, 0, true);
                self.schedule(
                    arrive,
                    Event::GetServe {
                        op,
                        src: pe,
                        target,
                        offset,
                        nbytes,
                    },
                );
            }
        }
    }

    fn complete_pending(&mut self, pe: PeId, op: u64) {
        let slot = &mut self.pes[pe.0];
        slot.pending.retain(|p| p.op != op);
        match &slot.block {
            Some(Block::Delivered(o)) if *o == op => self.wake(pe),
            Some(Block::Quiet) if slot.pending.is_empty() => self.wake(pe),
            _ => {}
        }
    }

    fn handle(&mut self, event: Event) {
        let o_s = self.cfg.net.o_s;
        match event {
            Event::Resume(_) => unreachable!("resume handled by the run loop"),
            Event::Mark { pe, kind, op } => self.record(pe, kind, op, None),
            Event::PutArrive {
                op,
                src,
                target,
                offset,
                data,
            } => {
                self.write_remote(target, offset, &data);
                self.record(src, EventKind::RemoteDelivered, op, None);
                self.deliver_op(op);
                self.complete_pending(src, op);
            }
            Event::GetServe {
                op,
                src,
                target,
                offset,
                nbytes,
            } => {
                let data = self.snapshot(target, offset, nbytes);
                let now = self.now;
                let (_, arrive) = self.inject(target, now + o_s, nbytes, false);
                self.schedule(arrive, Event::GetArrive { op, src, offset, data });
            }
            Event::GetArrive { op, src, offset, data } => {
                self.write_remote(src, offset, &data);
                self.record(src, EventKind::RemoteDelivered, op, None);
                self.deliver_op(op);
                self.record(src, EventKind::LocalComplete, op, None);
                self.complete_pending(src, op);
            }
            Event::AtomicApply {
                op,
                src,
                target,
                offset,
            } => {
                let old = self.load_cell(target, offset);
                self.store_cell(target, offset, old + 1);
                self.record(target, EventKind::AckInc, op, Some(old + 1));
                self.deliver_op(op);
                self.recheck_waiter(target);
                let now = self.now;
                let (_, arrive) = self.inject(target, now + o_s, 0, false);
                self.schedule(
                    arrive,
                    Event::Reply {
                        op,
                        dst: src,
                        value: Reply::Int(old),
                        trace: None,
                    },
                );
            }
            Event::ClockServe { op, src, target } => {
                let stamp = self
                    .cfg
                    .clock
                    .local_time(target, self.now)
                    .expect("target validated at call");
                self.deliver_op(op);
                let now = self.now;
                let (_, arrive) = self.inject(target, now + o_s, 0, false);
                self.schedule(
                    arrive,
                    Event::Reply {
                        op,
                        dst: src,
                        value: Reply::Time(stamp),
                        trace: None,
                    },
                );
            }
            Event::Reply { op, dst, value, trace } => {
                if let Some((kind, word)) = trace {
                    self.record(dst, kind, op, Some(word));
                }
                let slot = &mut self.pes[dst.0];
                slot.replies.insert(op, value);
                if slot.block == Some(Block::Op(op)) {
                    self.wake(dst);
                }
            }
            Event::CtrlArrive { dst, tag, data } => {
                if let Some((offset, bytes)) = data {
                    self.write_remote(dst, offset, &bytes);
                }
                *self.ctrl.entry((dst, tag)).or_insert(0) += 1;
                if let Some(block @ Block::Ctrl { .. }) = self.pes[dst.0].block.clone() {
                    if self.block_satisfied(dst, &block) {
                        self.wake(dst);
                    }
                }
            }
            Event::LockArrive {
                op,
                src,
                home,
                offset,
                action,
            } => self.handle_lock(op, src, home, offset, action),
        }
    }

    fn handle_lock(&mut self, op: u64, src: PeId, home: PeId, offset: usize, action: LockAction) {
        let now = self.now;
        let ready = now + self.cfg.net.o_s;
        let word = offset as i64;
        self.deliver_op(op);
        match action {
            LockAction::Set => {
                self.record(src, EventKind::LockEnqueued, op, Some(word));
                let lock = self.locks.entry(offset).or_default();
                if lock.holder.is_none() {
                    lock.holder = Some(src);
                    self.grant(home, src, op, ready, Reply::Unit, word);
                } else {
                    lock.queue.push_back((src, op));
                }
            }
            LockAction::Test => {
                let lock = self.locks.entry(offset).or_default();
                if lock.holder.is_none() {
                    lock.holder = Some(src);
                    self.record(src, EventKind::LockEnqueued, op, Some(word));
                    self.grant(home, src, op, ready, Reply::Flag(true), word);
                } else {
                    let (_, arrive) = self.inject(home, ready, 0, false);
                    self.schedule(
                        arrive,
                        Event::Reply {
                            op,
                            dst: src,
                            value: Reply::Flag(false),
                            trace: None,
                        },
                    );
                }
            }
            LockAction::Clear => {
                self.record(src, EventKind::LockReleased, op, Some(word));
                let lock = self.locks.entry(offset).or_default();
                lock.holder = None;
                if let Some((next, next_op)) = lock.queue.pop_front() {
                    lock.holder = Some(next);
                    self.grant(home, next, next_op, ready, Reply::Unit, word);
                }
                let (_, arrive) = self.inject(home, ready, 0, false);
                self.schedule(
                    arrive,
                    Event::Reply {
                        op,
                        dst: src,
                        value: Reply::Unit,
                        trace: None,
                    },
                );
            }
        }
    }

    fn grant(&mut self, home: PeId, to: PeId, op: u64, ready: f64, value: Reply, word: i64) {
        let (_, arrive) = self.inject(home, ready, 0, false);
        self.schedule(
            arrive,
            Event::Reply {
                op,
                dst: to,
                value,
                trace: Some((EventKind::LockAcquired, word)),
            },
        );
    }

    fn blocked_report(&self) -> Vec<BlockedPe> {
        self.pes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.status == PeStatus::Running)
            .map(|(i, s)| BlockedPe {
                pe: PeId(i),
                reason: match &s.block {
                    Some(Block::Op(op)) => {
                        let kind = self.trace.op(*op).map(|o| format!("{:?}", o.kind));
                        format!("{} (op {op})", kind.unwrap_or_else(|| "operation".into()))
                    }
                    Some(Block::Delivered(op)) => {
                        let kind = self.trace.op(*op).map(|o| format!("{:?}", o.kind));
                        format!("{} (op {op})", kind.unwrap_or_else(|| "operation".into()))
                    }
                    Some(Block::Quiet) => "quiet".into(),
                    Some(Block::WaitUntil { offset, cmp, value }) => {
                        format!("wait_until(offset {offset} {cmp:?} {value})")
                    }
                    Some(Block::Ctrl { tag, .. }) => format!("collective instance {}", tag.0),
                    Some(Block::Sleep) => "sleep".into(),
                    None => "unknown".into(),
                },
            })
            .collect()
    }

    fn reset_after_abort(&mut self) {
        self.queue.clear();
        self.running = false;
        for slot in &mut self.pes {
            slot.status = PeStatus::Idle;
            slot.block = None;
            slot.wake_scheduled = false;
            slot.pending.clear();
            slot.replies.clear();
        }
    }
}

type ProgramFuture<T> = Pin<Box<dyn Future<Output = Result<T, SimError>>>>;

/// Results of one [`World::run`].
#[derive(Debug)]
pub struct SimOutcome<T> {
    pub trace: GroundTruthTrace,
    pub results: Vec<T>,
}

/// The simulated machine. Cheap to clone: clones share the same state.
#[derive(Clone)]
pub struct World {
    pub(crate) state: Rc<RefCell<State>>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.npes;
        let state = State {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            heaps: vec![vec![0; cfg.heap_bytes]; n],
            heap_top: 0,
            nic_free: vec![0.0; n],
            pes: (0..n)
                .map(|_| PeSlot {
                    status: PeStatus::Idle,
                    block: None,
                    wake_scheduled: false,
                    pending: Vec::new(),
                    replies: BTreeMap::new(),
                })
                .collect(),
            running: false,
            rng: ChaCha8Rng::seed_from_u64(cfg.clock.jitter_seed),
            trace: GroundTruthTrace::default(),
            coll_seq: vec![0; n],
            ctrl: BTreeMap::new(),
            locks: BTreeMap::new(),
            lock_homes: BTreeMap::new(),
            cfg,
        };
        Ok(Self {
            state: Rc::new(RefCell::new(state)),
        })
    }

    pub fn npes(&self) -> usize {
        self.state.borrow().cfg.npes
    }

    /// Current global simulated time.
    pub fn now(&self) -> f64 {
        self.state.borrow().now
    }

    pub fn config(&self) -> WorldConfig {
        self.state.borrow().cfg.clone()
    }

    /// Reserves `nbytes` at the same offset on every PE.
    pub fn alloc(&mut self, nbytes: usize, align: usize) -> Result<usize, SimError> {
        let mut s = self.state.borrow_mut();
        let align = align.max(1);
        let offset = s.heap_top.div_ceil(align) * align;
        s.check_range(PeId(0), offset, nbytes)?;
        s.heap_top = offset + nbytes;
        Ok(offset)
    }

    pub fn set_lock_home(&mut self, offset: usize, home: PeId) -> Result<(), SimError> {
        let mut s = self.state.borrow_mut();
        s.check_pe(home)?;
        s.lock_homes.insert(offset, home);
        Ok(())
    }

    pub fn read_cell(&self, pe: PeId, offset: usize) -> Result<i64, SimError> {
        let s = self.state.borrow();
        s.check_cell(pe, offset)?;
        Ok(s.load_cell(pe, offset))
    }

    pub fn read_bytes(&self, pe: PeId, offset: usize, len: usize) -> Result<Vec<u8>, SimError> {
        let s = self.state.borrow();
        s.check_range(pe, offset, len)?;
        Ok(s.snapshot(pe, offset, len))
    }

    pub fn write_bytes(&mut self, pe: PeId, offset: usize, data: &[u8]) -> Result<(), SimError> {
        let mut s = self.state.borrow_mut();
        s.check_range(pe, offset, data.len())?;
        s.heaps[pe.0][offset..offset + data.len()].copy_from_slice(data);
        Ok(())
    }

    /// Full history of the world across every run so far.
    pub fn trace(&self) -> GroundTruthTrace {
        self.state.borrow().trace.clone()
    }

    /// Runs the same program on every PE.
    pub fn run_each<T, F, Fut>(&mut self, program: F) -> Result<SimOutcome<T>, SimError>
    where
        T: 'static,
        F: Fn(Pe) -> Fut,
        Fut: Future<Output = Result<T, SimError>> + 'static,
    {
        let n = self.npes();
        self.run((0..n).map(|_| &program).collect())
    }

    /// Runs one program per PE until all finish and every in-flight message
    /// has landed. Fails with [`SimError::Deadlock`] if the event queue
    /// drains while a PE is still blocked.
    pub fn run<T, F, Fut>(&mut self, programs: Vec<F>) -> Result<SimOutcome<T>, SimError>
    where
        T: 'static,
        F: FnOnce(Pe) -> Fut,
        Fut: Future<Output = Result<T, SimError>> + 'static,
    {
        let n = self.npes();
        if programs.len() != n {
            return Err(SimError::ProgramCount {
                expected: n,
                got: programs.len(),
            });
        }
        let (entries0, ops0, coll0) = {
            let mut s = self.state.borrow_mut();
            s.running = true;
            let now = s.now;
            for i in 0..n {
                s.pes[i].status = PeStatus::Running;
                s.pes[i].wake_scheduled = true;
                s.schedule(now, Event::Resume(PeId(i)));
            }
            (s.trace.entries.len(), s.trace.ops.len(), s.trace.collectives.len())
        };

        let mut futures: Vec<Option<ProgramFuture<T>>> = programs
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let pe = Pe::new(self.clone(), PeId(i));
                Some(Box::pin(p(pe)) as ProgramFuture<T>)
            })
            .collect();
        let mut results: Vec<Option<T>> = (0..n).map(|_| None).collect();
        let mut cx = Context::from_waker(Waker::noop());

        loop {
            let next = {
                let mut s = self.state.borrow_mut();
                let next = s.queue.pop();
                if let Some(ev) = &next {
                    debug_assert!(ev.time >= s.now, "time went backwards");
                    s.now = ev.time;
                }
                next
            };
            let Some(Scheduled { event, .. }) = next else { break };
            match event {
                Event::Resume(pe) => {
                    self.state.borrow_mut().pes[pe.0].wake_scheduled = false;
                    let Some(fut) = futures[pe.0].as_mut() else { continue };
                    match fut.as_mut().poll(&mut cx) {
                        Poll::Pending => {}
                        Poll::Ready(Ok(v)) => {
                            results[pe.0] = Some(v);
                            futures[pe.0] = None;
                            let mut s = self.state.borrow_mut();
                            s.pes[pe.0].status = PeStatus::Done;
                            s.pes[pe.0].block = None;
                        }
                        Poll::Ready(Err(e)) => {
                            drop(futures);
                            self.state.borrow_mut().reset_after_abort();
                            return Err(e);
                        }
                    }
                }
                other => self.state.borrow_mut().handle(other),
            }
        }

        let mut s = self.state.borrow_mut();
        if results.iter().any(Option::is_none) {
            let blocked = s.blocked_report();
            drop(futures);
            s.reset_after_abort();
            return Err(SimError::Deadlock(blocked));
        }
        s.running = false;
        for slot in &mut s.pes {
            slot.status = PeStatus::Idle;
            slot.replies.clear();
        }
        let trace = GroundTruthTrace {
            entries: s.trace.entries[entries0..].to_vec(),
            ops: s.trace.ops[ops0..].to_vec(),
            collectives: s.trace.collectives[coll0..].to_vec(),
        };
        Ok(SimOutcome {
            trace,
            results: results.into_iter().map(|r| r.expect("checked above")).collect(),
        })
    }
}
