//! Sample statistics and the repeat-until-stable controller.

use serde::{Deserialize, Serialize};

/// Default relative spread above which a measurement is called unstable.
pub const DEFAULT_SIGMA_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MAX_REPS: usize = 32;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation; 0 for fewer than two samples.
pub fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// `sigma / |mean|`, or `None` when the mean is zero.
pub fn relative_spread(mean: f64, sigma: f64) -> Option<f64> {
    (mean != 0.0).then(|| sigma / mean.abs())
}

pub fn is_unstable(xs: &[f64], threshold: f64) -> bool {
    let s = stddev(xs);
    match relative_spread(mean(xs), s) {
        Some(r) => r > threshold,
        None => s > threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stable {
    pub mean: f64,
    pub sigma: f64,
    pub reps: usize,
    /// `sigma / mean`, absent when the mean is zero and `sigma` is absolute.
    pub relative: Option<f64>,
    pub samples: Vec<f64>,
}

/// Calls `thunk` until the spread of its results is at most `threshold`
/// (relative to the mean) or `max_reps` samples were taken.
pub fn run_until_stable<E>(
    mut thunk: impl FnMut() -> Result<f64, E>,
    threshold: f64,
    max_reps: usize,
) -> Result<Stable, E> {
    assert!(max_reps >= 2, "max_reps must be at least 2");
    let mut samples = Vec::with_capacity(max_reps);
    loop {
        samples.push(thunk()?);
        if samples.len() < 2 {
            continue;
        }
        let m = mean(&samples);
        let s = stddev(&samples);
        let rel = relative_spread(m, s);
        let done = rel.unwrap_or(s) <= threshold || samples.len() >= max_reps;
        if done {
            return Ok(Stable {
                mean: m,
                sigma: s,
                reps: samples.len(),
                relative: rel,
                samples,
            });
        }
    }
}
