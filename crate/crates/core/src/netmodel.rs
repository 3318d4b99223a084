//! Parametric cost model for simulated communication and the per-PE clock
//! observation model.
//!
//! All durations are plain `f64` seconds. The network follows LogP with the
//! LogGP per-byte extension: a message of `n` bytes costs the sender `o_s`,
//! occupies the wire for `G * n`, travels for `L` and costs `o_r` at the
//! receiving side.

use serde::{Deserialize, Serialize};

use crate::sim::{PeId, SimError};

/// Whether posted non-blocking operations make progress on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProgressMode {
    /// Transfers proceed asynchronously once posted.
    Background,
    /// Nothing moves until the initiator calls quiet.
    OnQuiet,
}

/// When a blocking put hands control back to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PutReturnPolicy {
    /// Returns once the source buffer can be reused.
    LocalCompletion,
    /// Returns once the data has landed in the remote buffer.
    RemoteCompletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    /// Send overhead.
    pub o_s: f64,
    /// Receive overhead.
    pub o_r: f64,
    /// Wire latency.
    pub latency: f64,
    /// Minimum gap between two injections by the same PE.
    pub gap: f64,
    /// Per-byte serialization cost (seconds per byte).
    pub per_byte: f64,
    pub progress: ProgressMode,
    pub put_return: PutReturnPolicy,
    /// Base cost of a quiet call. `None` means `2 * o_s`.
    pub quiet_base: Option<f64>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl NetworkModel {
    /// A network where every operation is free.
    pub fn zero() -> Self {
        Self {
            o_s: 0.0,
            o_r: 0.0,
            latency: 0.0,
            gap: 0.0,
            per_byte: 0.0,
            progress: ProgressMode::Background,
            put_return: PutReturnPolicy::LocalCompletion,
            quiet_base: None,
        }
    }

    pub fn logp(o_s: f64, o_r: f64, latency: f64, gap: f64, per_byte: f64) -> Self {
        Self {
            o_s,
            o_r,
            latency,
            gap,
            per_byte,
            ..Self::zero()
        }
    }

    pub fn with_progress(mut self, progress: ProgressMode) -> Self {
        self.progress = progress;
        self
    }

    pub fn with_put_return(mut self, policy: PutReturnPolicy) -> Self {
        self.put_return = policy;
        self
    }

    pub fn with_quiet_base(mut self, q0: f64) -> Self {
        self.quiet_base = Some(q0);
        self
    }

    /// Fixed cost charged by every quiet call.
    pub fn quiet_cost(&self) -> f64 {
        self.quiet_base.unwrap_or(2.0 * self.o_s)
    }

    /// Checks that every duration is finite and non-negative.
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("o_s", self.o_s),
            ("o_r", self.o_r),
            ("L", self.latency),
            ("g", self.gap),
            ("G", self.per_byte),
            ("q0", self.quiet_cost()),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a non-negative duration, got {v}"));
            }
        }
        Ok(())
    }

    /// One-way delivery cost of a single `nbytes` message.
    pub fn transfer_duration(&self, nbytes: usize) -> f64 {
        self.o_s + self.latency + self.per_byte * nbytes as f64 + self.o_r
    }

    /// Cost of a request/response exchange whose response carries `nbytes`.
    pub fn round_trip(&self, nbytes: usize) -> f64 {
        self.transfer_duration(0) + self.transfer_duration(nbytes)
    }
}

/// Free-function form of [`NetworkModel::transfer_duration`].
pub fn transfer_duration(model: &NetworkModel, nbytes: usize) -> f64 {
    model.transfer_duration(nbytes)
}

/// Affine per-PE clocks plus the cost of reading them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub drift_rate: Vec<f64>,
    pub initial_offset: Vec<f64>,
    pub timer_overhead: f64,
    pub jitter_seed: u64,
    /// Half-width of the uniform jitter added to each message's wire latency.
    pub jitter: f64,
}

impl ClockModel {
    /// Identical, perfect clocks on `npes` PEs.
    pub fn perfect(npes: usize) -> Self {
        Self {
            drift_rate: vec![0.0; npes],
            initial_offset: vec![0.0; npes],
            timer_overhead: 0.0,
            jitter_seed: 0,
            jitter: 0.0,
        }
    }

    pub fn with_timer_overhead(mut self, overhead: f64) -> Self {
        self.timer_overhead = overhead;
        self
    }

    pub fn with_jitter(mut self, half_width: f64, seed: u64) -> Self {
        self.jitter = half_width;
        self.jitter_seed = seed;
        self
    }

    pub fn with_drift(mut self, drift: Vec<f64>) -> Self {
        self.drift_rate = drift;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Self {
        self.initial_offset = offsets;
        self
    }

    pub fn npes(&self) -> usize {
        self.drift_rate.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.drift_rate.len() != self.initial_offset.len() {
            return Err(format!(
                "clock has {} drift rates but {} offsets",
                self.drift_rate.len(),
                self.initial_offset.len()
            ));
        }
        if let Some(d) = self.drift_rate.iter().find(|d| !(**d > -1.0) || !d.is_finite()) {
            return Err(format!("drift rate {d} must be finite and > -1"));
        }
        if !(self.timer_overhead >= 0.0) || !self.timer_overhead.is_finite() {
            return Err(format!("timer overhead {} must be >= 0", self.timer_overhead));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(format!("jitter {} must be >= 0", self.jitter));
        }
        Ok(())
    }

    /// Reading of `pe`'s clock at global time `t_global`.
    pub fn local_time(&self, pe: PeId, t_global: f64) -> Result<f64, SimError> {
        let (drift, offset) = self.params(pe)?;
        Ok(offset + (1.0 + drift) * t_global)
    }

    /// Global instant at which `pe`'s clock reads `t_local`.
    pub fn global_time(&self, pe: PeId, t_local: f64) -> Result<f64, SimError> {
        let (drift, offset) = self.params(pe)?;
        Ok((t_local - offset) / (1.0 + drift))
    }

    fn params(&self, pe: PeId) -> Result<(f64, f64), SimError> {
        match (self.drift_rate.get(pe.0), self.initial_offset.get(pe.0)) {
            (Some(d), Some(o)) => Ok((*d, *o)),
            _ => Err(SimError::UnknownPe(pe)),
        }
    }
}

/// Free-function form of [`ClockModel::local_time`].
pub fn local_time(clock: &ClockModel, pe: PeId, t_global: f64) -> Result<f64, SimError> {
    clock.local_time(pe, t_global)
}
