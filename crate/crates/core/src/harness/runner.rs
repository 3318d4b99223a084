//! Executes the measurements of a configuration.

use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{BenchConfig, MeasurementSpec, OpSel};
use super::output::ResultRow;
use crate::coll::{self, SkParams};
use crate::lockbench::measure_lock;
use crate::p2p::{measure_blocking, measure_nonblocking, measure_quiet};
use crate::sim::{SimError, World, WorldConfig};
use crate::stats::run_until_stable;
use crate::sync::{self, DEFAULT_PING_REPS};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("measurement {name} (nbytes {nbytes}): {source}")]
    Measurement {
        name: String,
        nbytes: usize,
        source: BenchError,
    },
}

impl RunError {
    pub fn is_deadlock(&self) -> bool {
        let RunError::Measurement { source, .. } = self;
        matches!(source, BenchError::Sim(SimError::Deadlock(_)))
    }
}

/// Seed of one repetition, derived from the run seed and its coordinates.
pub fn derive_seed(seed: u64, measurement: &str, nbytes: usize, rep: usize) -> u64 {
    let mut h = DefaultHasher::new();
    (seed, measurement, nbytes, rep).hash(&mut h);
    h.finish()
}

pub fn world_config(cfg: &BenchConfig, m: &MeasurementSpec, nbytes: usize, jitter_seed: u64) -> WorldConfig {
    let npes = cfg.npes_of(m);
    let net = cfg.network(&m.network).cloned().expect("network validated at parse time");
    let heap = (nbytes + coll::BUF).next_power_of_two().max(4096);
    WorldConfig::new(npes, net)
        .with_clock(cfg.clock.model(npes, jitter_seed))
        .with_heap(heap)
        .with_topology(m.topology)
        .with_barrier(m.barrier)
}

/// One repetition: `(measured, ground truth)`.
pub fn measure_once(wc: WorldConfig, m: &MeasurementSpec, nbytes: usize) -> Result<(f64, f64), BenchError> {
    let mut w = World::new(wc)?;
    let iters = m.iters;
    Ok(match m.op {
        OpSel::Blocking => {
            let r = measure_blocking(&mut w, m.kind, nbytes, iters, m.strategy)?;
            (r.mean, r.ground_truth)
        }
        OpSel::Nonblocking => {
            let r = measure_nonblocking(&mut w, m.kind, m.variant, nbytes, iters, m.strategy)?;
            (r.mean, r.ground_truth)
        }
        OpSel::Quiet => {
            let r = measure_quiet(&mut w, iters, m.strategy)?;
            (r.mean, r.ground_truth)
        }
        OpSel::Bcast => {
            use coll::BcastAlgo::*;
            let r = match m.algo {
                NaiveLoop => coll::measure_bcast_naive(&mut w, nbytes, iters)?,
                BarrierSync => coll::measure_bcast_barrier(&mut w, nbytes, iters, sync::DEFAULT_BARRIER_REPS)?,
                ActiveSync => {
                    let mut s = coll::prepare_sync(&mut w, nbytes, DEFAULT_PING_REPS)?;
                    coll::measure_bcast_sync(&mut w, nbytes, iters, &mut s)?
                }
                Rounds => coll::measure_bcast_rounds(&mut w, nbytes, DEFAULT_PING_REPS)?,
                SK => coll::measure_bcast_sk(&mut w, nbytes, SkParams::new(iters))?,
            };
            (r.result, r.ground_truth)
        }
        OpSel::Barrier => sync::measure_barrier_with_truth(&mut w, iters)?,
        OpSel::Lock => {
            let r = measure_lock(&mut w, m.lock_scenario(), iters)?;
            (r.mean, r.ground_truth)
        }
    })
}

/// Repeats one (measurement, size) point until stable.
pub fn run_point(cfg: &BenchConfig, m: &MeasurementSpec, nbytes: usize) -> Result<ResultRow, RunError> {
    let mut truths = Vec::new();
    let mut rep = 0;
    let stable = run_until_stable(
        || {
            let seed = derive_seed(cfg.run.seed, &m.name, nbytes, rep);
            rep += 1;
            let (v, gt) = measure_once(world_config(cfg, m, nbytes, seed), m, nbytes)?;
            truths.push(gt);
            Ok(v)
        },
        cfg.run.sigma_threshold,
        cfg.run.max_reps,
    )
    .map_err(|source| RunError::Measurement {
        name: m.name.clone(),
        nbytes,
        source,
    })?;
    let gt = truths.iter().sum::<f64>() / truths.len() as f64;
    let mut row = ResultRow::new(&m.name, nbytes, &m.label(), stable.mean, stable.sigma, stable.reps, gt);
    row.expect = m.expect;
    row.tolerance = m.tolerance;
    Ok(row)
}

/// Runs every point in parallel; rows come back in configuration order.
pub fn run_config(cfg: &BenchConfig) -> Result<Vec<ResultRow>, RunError> {
    let points: Vec<(&MeasurementSpec, usize)> = cfg
        .measurements
        .iter()
        .flat_map(|m| m.nbytes.iter().map(move |&n| (m, n)))
        .collect();
    points.par_iter().map(|&(m, n)| run_point(cfg, m, n)).collect()
}
