//! Deterministic discrete-event simulator of an OpenSHMEM-like runtime.
//!
//! Each PE runs an `async` program against a [`Pe`] handle. Only one PE
//! advances at a time: a program runs until it awaits a runtime operation
//! that takes simulated time, at which point the scheduler pops the next
//! event in `(time, insertion sequence)` order. Every event that matters for
//! verification is appended to a [`GroundTruthTrace`].
//!
//! A [`World`] persists across runs: heap contents, clocks and global time
//! carry over, so a measurement driver can calibrate in one run and measure
//! in the next.

mod collective;
mod engine;
mod pe;
mod trace;

use std::fmt;
use std::future::Future;

use thiserror::Error;

pub use collective::{binomial_children, binomial_parent};
pub use engine::{SimOutcome, World};
pub use pe::{Cmp, OpHandle, Pe};
pub use trace::{
    extract_ground_truth, CollectiveKind, CollectiveRecord, EventKind, GroundTruthQuery,
    GroundTruthTrace, OpKind, OpRecord, TraceEntry,
};

use crate::netmodel::{ClockModel, NetworkModel};

/// Processing element index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeId(pub usize);

impl fmt::Display for PeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PE{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcastTopology {
    Linear,
    BinomialTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierAlgo {
    Dissemination,
    /// Linear reduction to `root` followed by a binomial release from `root`.
    ReduceBroadcast(PeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedPe {
    pub pe: PeId,
    pub reason: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("unknown {0}")]
    UnknownPe(PeId),
    #[error("heap fault on {pe}: [{offset}, {offset}+{len}) outside heap of {heap} bytes")]
    HeapFault {
        pe: PeId,
        offset: usize,
        len: usize,
        heap: usize,
    },
    #[error("offset {0} is not an aligned integer cell")]
    Misaligned(usize),
    #[error("deadlock: {}", fmt_blocked(.0))]
    Deadlock(Vec<BlockedPe>),
    #[error("collective mismatch at instance {instance} on {pe}: expected {expected:?}, got {found:?}")]
    CollectiveMismatch {
        instance: u64,
        pe: PeId,
        expected: CollectiveKind,
        found: CollectiveKind,
    },
    #[error("{pe} cleared lock at offset {offset} without holding it")]
    ClearByNonHolder { pe: PeId, offset: usize },
    #[error("runtime operation called outside a running PE program")]
    NotRunning,
    #[error("expected {expected} programs, got {got}")]
    ProgramCount { expected: usize, got: usize },
    #[error("no such instance in trace: {0}")]
    MissingInstance(String),
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
}

fn fmt_blocked(blocked: &[BlockedPe]) -> String {
    blocked
        .iter()
        .map(|b| format!("{} blocked in {}", b.pe, b.reason))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Everything needed to build a [`World`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub npes: usize,
    pub net: NetworkModel,
    pub clock: ClockModel,
    pub heap_bytes: usize,
    pub bcast_topology: BcastTopology,
    pub barrier_algo: BarrierAlgo,
    /// Simulated duration of one busy-wait work unit.
    pub busy_unit: f64,
}

impl WorldConfig {
    pub fn new(npes: usize, net: NetworkModel) -> Self {
        Self {
            npes,
            net,
            clock: ClockModel::perfect(npes),
            heap_bytes: 1 << 12,
            bcast_topology: BcastTopology::BinomialTree,
            barrier_algo: BarrierAlgo::Dissemination,
            busy_unit: 1e-9,
        }
    }

    pub fn with_clock(mut self, clock: ClockModel) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_heap(mut self, bytes: usize) -> Self {
        self.heap_bytes = bytes;
        self
    }

    pub fn with_topology(mut self, topology: BcastTopology) -> Self {
        self.bcast_topology = topology;
        self
    }

    pub fn with_barrier(mut self, algo: BarrierAlgo) -> Self {
        self.barrier_algo = algo;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.npes == 0 {
            return Err(SimError::InvalidConfig("npes must be >= 1".into()));
        }
        self.net.validate().map_err(SimError::InvalidConfig)?;
        self.clock.validate().map_err(SimError::InvalidConfig)?;
        if self.clock.npes() != self.npes {
            return Err(SimError::InvalidConfig(format!(
                "clock describes {} PEs, world has {}",
                self.clock.npes(),
                self.npes
            )));
        }
        if let BarrierAlgo::ReduceBroadcast(root) = self.barrier_algo {
            if root.0 >= self.npes {
                return Err(SimError::InvalidConfig(format!("barrier root {root} out of range")));
            }
        }
        if !(self.busy_unit > 0.0) || !self.busy_unit.is_finite() {
            return Err(SimError::InvalidConfig("busy-wait unit cost must be > 0".into()));
        }
        Ok(())
    }
}

/// Runs one program per PE on `world` and returns the trace of that run.
pub fn run_simulation<F, Fut>(world: &mut World, programs: Vec<F>) -> Result<GroundTruthTrace, SimError>
where
    F: FnOnce(Pe) -> Fut,
    Fut: Future<Output = Result<(), SimError>> + 'static,
{
    world.run(programs).map(|o| o.trace)
}
