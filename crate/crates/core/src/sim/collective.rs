use super::pe::Pe;
use super::trace::{CollectiveKind, EventKind};
use super::{BarrierAlgo, BcastTopology, PeId, SimError};

const BCAST: u8 = 0;
const DISSEMINATION: u8 = 1;
const REDUCE: u8 = 2;
const RELEASE: u8 = 3;

/// Parent of `pe` in a binomial tree over `npes` PEs rooted at `root`.
pub fn binomial_parent(pe: PeId, root: PeId, npes: usize) -> Option<PeId> {
    let rel = (pe.0 + npes - root.0) % npes;
    if rel == 0 {
        return None;
    }
    let parent_rel = rel & (rel - 1);
    Some(PeId((parent_rel + root.0) % npes))
}

/// Children of `pe`, largest subtree first.
pub fn binomial_children(pe: PeId, root: PeId, npes: usize) -> Vec<PeId> {
    let rel = (pe.0 + npes - root.0) % npes;
    let limit = if rel == 0 { npes.next_power_of_two() } else { rel & rel.wrapping_neg() };
    let mut children = Vec::new();
    let mut mask = limit >> 1;
    while mask > 0 {
        let child = rel + mask;
        if child < npes {
            children.push(PeId((child + root.0) % npes));
        }
        mask >>= 1;
    }
    children
}

impl Pe {
    /// Receives from the tree parent (unless root), forwards to children and
    /// returns once every send has left the NIC.
    async fn tree_fanout(&self, root: PeId, tag: (u64, u8, u32), payload: Option<(usize, usize)>) {
        let n = self.npes();
        if self.id() != root {
            self.recv_ctrl(tag, 1).await;
        }
        let mut last = self.global_now();
        for child in binomial_children(self.id(), root, n) {
            last = last.max(self.send_ctrl(child, tag, payload).await);
        }
        self.wait_until_global(last).await;
    }

    /// Copies `nbytes` at `offset` from `root` to every PE.
    pub async fn broadcast(&self, root: PeId, offset: usize, nbytes: usize) -> Result<(), SimError> {
        let me = self.id();
        let (inst, topology) = self.with_state(|s| -> Result<_, SimError> {
            s.check_running(me)?;
            s.check_pe(root)?;
            s.check_range(me, offset, nbytes)?;
            let inst = s.begin_collective(me, CollectiveKind::Broadcast { root })?;
            s.record(me, EventKind::BcastEnter, inst, None);
            Ok((inst, s.cfg.bcast_topology))
        })?;
        let tag = (inst, BCAST, 0);
        let payload = Some((offset, nbytes));
        match topology {
            BcastTopology::BinomialTree => self.tree_fanout(root, tag, payload).await,
            BcastTopology::Linear => {
                if me == root {
                    let mut last = self.global_now();
                    for i in (0..self.npes()).filter(|&i| i != root.0) {
                        last = last.max(self.send_ctrl(PeId(i), tag, payload).await);
                    }
                    self.wait_until_global(last).await;
                } else {
                    self.recv_ctrl(tag, 1).await;
                }
            }
        }
        self.with_state(|s| s.record(me, EventKind::BcastExit, inst, None));
        Ok(())
    }

    pub async fn barrier(&self) -> Result<(), SimError> {
        let me = self.id();
        let n = self.npes();
        let (inst, algo) = self.with_state(|s| -> Result<_, SimError> {
            s.check_running(me)?;
            let inst = s.begin_collective(me, CollectiveKind::Barrier)?;
            s.record(me, EventKind::BarrierEnter, inst, None);
            Ok((inst, s.cfg.barrier_algo))
        })?;
        match algo {
            BarrierAlgo::Dissemination => {
                let mut last = self.global_now();
                let mut dist = 1;
                let mut round = 0;
                while dist < n {
                    let tag = (inst, DISSEMINATION, round);
                    last = last.max(self.send_ctrl(PeId((me.0 + dist) % n), tag, None).await);
                    self.recv_ctrl(tag, 1).await;
                    dist <<= 1;
                    round += 1;
                }
                self.wait_until_global(last).await;
            }
            BarrierAlgo::ReduceBroadcast(root) => {
                if n > 1 {
                    let notify = (inst, REDUCE, 0);
                    if me == root {
                        self.recv_ctrl(notify, (n - 1) as u32).await;
                    } else {
                        let local = self.send_ctrl(root, notify, None).await;
                        self.wait_until_global(local).await;
                    }
                    self.tree_fanout(root, (inst, RELEASE, 0), None).await;
                }
            }
        }
        self.with_state(|s| s.record(me, EventKind::BarrierExit, inst, None));
        Ok(())
    }
}
