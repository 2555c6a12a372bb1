//! Pieces shared by every trainer: BMU mappings, tie-breaking argmin,
//! seeded initialization and phase timers.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Best matching unit of every data point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub bmu: Vec<usize>,
}

impl Assignment {
    pub fn new(bmu: Vec<usize>) -> Self {
        Self { bmu }
    }

    pub fn len(&self) -> usize {
        self.bmu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bmu.is_empty()
    }

    /// Points per unit.
    pub fn counts(&self, k_units: usize) -> Vec<usize> {
        let mut counts = vec![0; k_units];
        for &c in &self.bmu {
            counts[c] += 1;
        }
        counts
    }
}

/// Index of the smallest value; ties go to the smallest index.
#[inline]
pub fn argmin<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// `k` data indices drawn without replacement; once all `n` are used the
/// remainder is drawn with replacement.
pub fn sample_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = index::sample(rng, n, k.min(n)).into_vec();
    while out.len() < k {
        out.push(rng.random_range(0..n));
    }
    out
}

/// Accumulated wall time of the two phases of a SOM iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub assignment_ns: u128,
    pub update_ns: u128,
}

impl PhaseTimings {
    pub fn time_assignment<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.assignment_ns += start.elapsed().as_nanos();
        out
    }

    pub fn time_update<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.update_ns += start.elapsed().as_nanos();
        out
    }
}
