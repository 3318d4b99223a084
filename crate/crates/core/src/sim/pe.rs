use std::future::Future;
use std::pin::Pin;
use std::task::{Context, Poll};

use super::engine::{Block, Deferred, Event, LockAction, PendingOp, Reply, Tag, World};
use super::trace::{EventKind, OpKind};
use super::{PeId, SimError};
use crate::netmodel::ProgressMode;

/// Comparator for [`Pe::wait_until`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cmp::Eq => lhs == rhs,
            Cmp::Ne => lhs != rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
        }
    }
}

/// Identifier of a posted non-blocking operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OpHandle(pub u64);

/// Yields once to the scheduler.
struct Suspend(bool);

impl Future for Suspend {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<()> {
        if self.0 {
            Poll::Ready(())
        } else {
            self.0 = true;
            Poll::Pending
        }
    }
}

/// Runtime handle given to one PE program.
#[derive(Clone)]
pub struct Pe {
    world: World,
    id: PeId,
}

impl Pe {
    pub(crate) fn new(world: World, id: PeId) -> Self {
        Self { world, id }
    }

    pub fn id(&self) -> PeId {
        self.id
    }

    pub fn npes(&self) -> usize {
        self.world.npes()
    }

    /// True global time. Only for oracles; measurement code reads [`Pe::timer`].
    pub fn global_now(&self) -> f64 {
        self.world.now()
    }

    fn running(&self) -> Result<(), SimError> {
        self.world.state.borrow().check_running(self.id)
    }

    async fn advance_to(&self, t: f64) {
        let wait = {
            let mut s = self.world.state.borrow_mut();
            if t > s.now {
                s.sleep(self.id, t);
                true
            } else {
                false
            }
        };
        if wait {
            Suspend(false).await;
        }
    }

    async fn advance(&self, dt: f64) {
        let t = self.world.now() + dt;
        self.advance_to(t).await;
    }

    async fn block_on(&self, block: Block) {
        loop {
            {
                let mut s = self.world.state.borrow_mut();
                if s.block_satisfied(self.id, &block) {
                    return;
                }
                s.pes[self.id.0].block = Some(block.clone());
            }
            Suspend(false).await;
        }
    }

    async fn await_reply(&self, op: u64) -> Reply {
        self.block_on(Block::Op(op)).await;
        let mut s = self.world.state.borrow_mut();
        s.finish_op(op);
        s.pes[self.id.0].replies.remove(&op).expect("reply present")
    }

    /// Reads the local clock, then charges the timer overhead.
    pub async fn timer(&self) -> Result<f64, SimError> {
        self.running()?;
        let (value, cost) = {
            let s = self.world.state.borrow();
            (s.cfg.clock.local_time(self.id, s.now)?, s.cfg.clock.timer_overhead)
        };
        self.advance(cost).await;
        Ok(value)
    }

    /// Local clock reading with no cost.
    pub fn local_now(&self) -> Result<f64, SimError> {
        let s = self.world.state.borrow();
        s.cfg.clock.local_time(self.id, s.now)
    }

    /// Burns `units` busy-wait work units.
    pub async fn spin(&self, units: u64) -> Result<(), SimError> {
        self.running()?;
        let unit = self.world.state.borrow().cfg.busy_unit;
        self.advance(units as f64 * unit).await;
        Ok(())
    }

    /// Spins until the local clock reads `target_local`. Returns `false`
    /// without waiting if that instant has already passed.
    pub async fn sleep_until_local(&self, target_local: f64) -> Result<bool, SimError> {
        self.running()?;
        let (t, now) = {
            let s = self.world.state.borrow();
            (s.cfg.clock.global_time(self.id, target_local)?, s.now)
        };
        if t < now {
            return Ok(false);
        }
        self.advance_to(t).await;
        Ok(true)
    }

    pub fn load(&self, offset: usize) -> Result<i64, SimError> {
        let s = self.world.state.borrow();
        s.check_cell(self.id, offset)?;
        Ok(s.load_cell(self.id, offset))
    }

    pub fn store(&self, offset: usize, value: i64) -> Result<(), SimError> {
        let mut s = self.world.state.borrow_mut();
        s.check_cell(self.id, offset)?;
        s.store_cell(self.id, offset, value);
        Ok(())
    }

    pub fn read_local(&self, offset: usize, len: usize) -> Result<Vec<u8>, SimError> {
        let s = self.world.state.borrow();
        s.check_range(self.id, offset, len)?;
        Ok(s.snapshot(self.id, offset, len))
    }

    pub fn write_local(&self, offset: usize, data: &[u8]) -> Result<(), SimError> {
        let mut s = self.world.state.borrow_mut();
        s.check_range(self.id, offset, data.len())?;
        s.heaps[self.id.0][offset..offset + data.len()].copy_from_slice(data);
        Ok(())
    }

    fn start_op(&self, kind: OpKind, target: Option<PeId>, offset: usize, nbytes: usize) -> Result<u64, SimError> {
        let mut s = self.world.state.borrow_mut();
        s.check_running(self.id)?;
        if let Some(t) = target {
            if kind.is_rma() {
                s.check_range(t, offset, nbytes)?;
                s.check_range(self.id, offset, nbytes)?;
            } else if kind == OpKind::FetchInc {
                s.check_cell(t, offset)?;
            } else {
                s.check_pe(t)?;
            }
        }
        let op = s.new_op(self.id, kind, target, nbytes);
        s.record(self.id, EventKind::Post, op, None);
        Ok(op)
    }

    /// Copies `nbytes` at `offset` from this PE to the same offset on `target`.
    pub async fn put(&self, target: PeId, offset: usize, nbytes: usize) -> Result<(), SimError> {
        let op = self.start_op(OpKind::Put, Some(target), offset, nbytes)?;
        let (local, remote_wait) = {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let data = s.snapshot(self.id, offset, nbytes);
            let (local, arrive) = s.inject(self.id, ready, nbytes, true);
            s.schedule(
                local,
                Event::Mark {
                    pe: self.id,
                    kind: EventKind::LocalComplete,
                    op,
                },
            );
            s.schedule(
                arrive,
                Event::PutArrive {
                    op,
                    src: self.id,
                    target,
                    offset,
                    data,
                },
            );
            s.pes[self.id.0].pending.push(PendingOp { op, deferred: None });
            let remote = s.cfg.net.put_return == crate::netmodel::PutReturnPolicy::RemoteCompletion;
            (local, remote)
        };
        self.advance_to(local).await;
        if remote_wait {
            self.block_on(Block::Delivered(op)).await;
        }
        self.world.state.borrow_mut().finish_op(op);
        Ok(())
    }

    /// Copies `nbytes` at `offset` on `target` into the same local offset.
    pub async fn get(&self, target: PeId, offset: usize, nbytes: usize) -> Result<(), SimError> {
        let op = self.start_op(OpKind::Get, Some(target), offset, nbytes)?;
        {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let (_, arrive) = s.inject(self.id, ready, 0, true);
            s.schedule(
                arrive,
                Event::GetServe {
                    op,
                    src: self.id,
                    target,
                    offset,
                    nbytes,
                },
            );
            s.pes[self.id.0].pending.push(PendingOp { op, deferred: None });
        }
        self.block_on(Block::Delivered(op)).await;
        self.world.state.borrow_mut().finish_op(op);
        Ok(())
    }

    async fn post_nbi(&self, kind: OpKind, target: PeId, offset: usize, nbytes: usize) -> Result<OpHandle, SimError> {
        let op = self.start_op(kind, Some(target), offset, nbytes)?;
        let done = {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let deferred = match kind {
                OpKind::PutNbi => Deferred::Put {
                    target,
                    offset,
                    data: s.snapshot(self.id, offset, nbytes),
                },
                _ => Deferred::Get { target, offset, nbytes },
            };
            let deferred = match s.cfg.net.progress {
                ProgressMode::Background => {
                    s.dispatch_deferred(self.id, op, ready, deferred);
                    None
                }
                ProgressMode::OnQuiet => Some(deferred),
            };
            s.pes[self.id.0].pending.push(PendingOp { op, deferred });
            ready
        };
        self.advance_to(done).await;
        self.world.state.borrow_mut().finish_op(op);
        Ok(OpHandle(op))
    }

    pub async fn put_nbi(&self, target: PeId, offset: usize, nbytes: usize) -> Result<OpHandle, SimError> {
        self.post_nbi(OpKind::PutNbi, target, offset, nbytes).await
    }

    pub async fn get_nbi(&self, target: PeId, offset: usize, nbytes: usize) -> Result<OpHandle, SimError> {
        self.post_nbi(OpKind::GetNbi, target, offset, nbytes).await
    }

    /// Waits until every outstanding operation of this PE is delivered.
    pub async fn quiet(&self) -> Result<(), SimError> {
        let op = self.start_op(OpKind::Quiet, None, 0, 0)?;
        let base_done = {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.quiet_cost();
            let deferred: Vec<_> = s.pes[self.id.0]
                .pending
                .iter_mut()
                .filter_map(|p| p.deferred.take().map(|d| (p.op, d)))
                .collect();
            for (pending_op, d) in deferred {
                s.dispatch_deferred(self.id, pending_op, ready, d);
            }
            ready
        };
        self.advance_to(base_done).await;
        self.block_on(Block::Quiet).await;
        let mut s = self.world.state.borrow_mut();
        s.record(self.id, EventKind::QuietDone, op, None);
        s.finish_op(op);
        Ok(())
    }

    /// Atomically increments the integer cell at `offset` on `target` and
    /// returns its previous value.
    pub async fn fetch_inc(&self, target: PeId, offset: usize) -> Result<i64, SimError> {
        let op = self.start_op(OpKind::FetchInc, Some(target), offset, 8)?;
        {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let (_, arrive) = s.inject(self.id, ready, 0, true);
            s.schedule(
                arrive,
                Event::AtomicApply {
                    op,
                    src: self.id,
                    target,
                    offset,
                },
            );
        }
        match self.await_reply(op).await {
            Reply::Int(v) => Ok(v),
            other => unreachable!("fetch_inc got {other:?}"),
        }
    }

    /// Reads `target`'s clock via a request/response exchange.
    pub async fn remote_clock(&self, target: PeId) -> Result<f64, SimError> {
        let op = self.start_op(OpKind::RemoteClock, Some(target), 0, 0)?;
        {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let (_, arrive) = s.inject(self.id, ready, 0, true);
            s.schedule(
                arrive,
                Event::ClockServe {
                    op,
                    src: self.id,
                    target,
                },
            );
        }
        match self.await_reply(op).await {
            Reply::Time(t) => Ok(t),
            other => unreachable!("remote_clock got {other:?}"),
        }
    }

    /// Suspends until the local cell at `offset` satisfies `cmp value`.
    pub async fn wait_until(&self, offset: usize, cmp: Cmp, value: i64) -> Result<(), SimError> {
        self.running()?;
        self.world.state.borrow().check_cell(self.id, offset)?;
        self.block_on(Block::WaitUntil { offset, cmp, value }).await;
        Ok(())
    }

    async fn lock_op(&self, kind: OpKind, action: LockAction, offset: usize) -> Result<Reply, SimError> {
        let home = self.world.state.borrow().lock_home(offset);
        if action == LockAction::Clear {
            let s = self.world.state.borrow();
            let holder = s.locks.get(&offset).and_then(|l| l.holder);
            if holder != Some(self.id) {
                return Err(SimError::ClearByNonHolder { pe: self.id, offset });
            }
        }
        let op = self.start_op(kind, Some(home), offset, 0)?;
        {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let (_, arrive) = s.inject(self.id, ready, 0, true);
            s.schedule(
                arrive,
                Event::LockArrive {
                    op,
                    src: self.id,
                    home,
                    offset,
                    action,
                },
            );
        }
        Ok(self.await_reply(op).await)
    }

    /// Blocks until the global lock identified by `offset` is held.
    pub async fn set_lock(&self, offset: usize) -> Result<(), SimError> {
        self.lock_op(OpKind::SetLock, LockAction::Set, offset).await.map(|_| ())
    }

    /// One attempt at the lock; `true` if it was acquired.
    pub async fn test_lock(&self, offset: usize) -> Result<bool, SimError> {
        match self.lock_op(OpKind::TestLock, LockAction::Test, offset).await? {
            Reply::Flag(b) => Ok(b),
            other => unreachable!("test_lock got {other:?}"),
        }
    }

    pub async fn clear_lock(&self, offset: usize) -> Result<(), SimError> {
        self.lock_op(OpKind::ClearLock, LockAction::Clear, offset).await.map(|_| ())
    }

    /// Sends a control message, paying the send overhead on this PE.
    /// Returns the instant the NIC is done with it.
    pub(crate) async fn send_ctrl(&self, dst: PeId, tag: Tag, payload: Option<(usize, usize)>) -> f64 {
        let (ready, local) = {
            let mut s = self.world.state.borrow_mut();
            let ready = s.now + s.cfg.net.o_s;
            let data = payload.map(|(off, len)| (off, s.snapshot(self.id, off, len)));
            let nbytes = payload.map_or(0, |p| p.1);
            let (local, arrive) = s.inject(self.id, ready, nbytes, true);
            s.schedule(arrive, Event::CtrlArrive { dst, tag, data });
            (ready, local)
        };
        self.advance_to(ready).await;
        local
    }

    pub(crate) async fn recv_ctrl(&self, tag: Tag, count: u32) {
        self.block_on(Block::Ctrl { tag, count }).await;
        self.world.state.borrow_mut().ctrl.remove(&(self.id, tag));
    }

    pub(crate) async fn wait_until_global(&self, t: f64) {
        self.advance_to(t).await;
    }

    pub(crate) fn with_state<R>(&self, f: impl FnOnce(&mut super::engine::State) -> R) -> R {
        f(&mut self.world.state.borrow_mut())
    }
}
