//! Median SOM: prototypes restricted to data points.
//!
//! Each iteration assigns every point to its closest prototype and then solves
//! one generalized median problem per unit. The weighted column sums are built
//! from per-cluster row sums, so an update costs O(N² + NK²) rather than
//! O(N²K). Two units choosing the same data point (a collision) are separated
//! by a regret-ordered greedy pass.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::{argmin, sample_indices, Assignment, PhaseTimings};
use crate::dismat::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::lattice::{neighborhood, Lattice, NeighborhoodSchedule};

/// `m_k = x_{indices[k]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianPrototypes {
    pub indices: Vec<usize>,
}

impl MedianPrototypes {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidParameter(format!(
                "prototype index {bad} out of range for {n} points"
            )));
        }
        Ok(Self { indices })
    }

    pub fn k_units(&self) -> usize {
        self.indices.len()
    }
}

/// Outcome of a median update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub prototypes: MedianPrototypes,
    /// Units whose unconstrained argmin was shared with another unit.
    pub collisions_detected: usize,
    /// Units left sharing a data point (only possible when K > N).
    pub collisions_unresolved: usize,
}

pub fn bmu_median(i: usize, protos: &MedianPrototypes, d: &DissimilarityMatrix) -> usize {
    let row = d.row(i);
    argmin(protos.indices.iter().map(|&j| row[j]))
}

pub fn assign_all(protos: &MedianPrototypes, d: &DissimilarityMatrix) -> Assignment {
    Assignment::new((0..d.n()).map(|i| bmu_median(i, protos, d)).collect())
}

/// `costs[k][j] = Σ_i h_{k c_i} D_ij`.
pub fn weighted_costs(d: &DissimilarityMatrix, assignment: &Assignment, h: &Array2<f64>) -> Array2<f64> {
    let k_units = h.nrows();
    let mut cluster_sums = Array2::<f64>::zeros((k_units, d.n()));
    for (i, &c) in assignment.bmu.iter().enumerate() {
        let mut acc = cluster_sums.row_mut(c);
        acc += &d.row(i);
    }
    h.dot(&cluster_sums)
}

/// Generalized-median update followed by collision resolution.
pub fn median_update(d: &DissimilarityMatrix, assignment: &Assignment, h: &Array2<f64>) -> Resolution {
    resolve_collisions(&weighted_costs(d, assignment, h))
}

/// Assigns each unit (row of `costs`) a data index.
///
/// Units are visited by decreasing regret (second-best minus best cost, ties
/// by unit index); each takes its cheapest index not yet taken. Cost ties go to
/// the smallest data index. When K > N the surplus units reuse their cheapest
/// index and are counted as unresolved.
pub fn resolve_collisions(costs: &Array2<f64>) -> Resolution {
    let (k_units, n) = costs.dim();
    let best: Vec<usize> = costs.rows().into_iter().map(|r| argmin(r.iter().cloned())).collect();

    let mut seen = vec![0usize; n];
    for &b in &best {
        seen[b] += 1;
    }
    let collisions_detected = best.iter().filter(|&&b| seen[b] > 1).count();
    if collisions_detected == 0 {
        return Resolution {
            prototypes: MedianPrototypes { indices: best },
            collisions_detected: 0,
            collisions_unresolved: 0,
        };
    }

    let regret: Vec<f64> = costs
        .rows()
        .into_iter()
        .zip(&best)
        .map(|(row, &b)| {
            let second = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != b)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            second - row[b]
        })
        .collect();
    let mut order: Vec<usize> = (0..k_units).collect();
    order.sort_by(|&a, &b| regret[b].total_cmp(&regret[a]).then(a.cmp(&b)));

    let mut taken = vec![false; n];
    let mut indices = vec![0; k_units];
    let mut unresolved = 0;
    for k in order {
        let row = costs.row(k);
        let free = row.iter().enumerate().filter(|&(j, _)| !taken[j]).fold(
            None,
            |acc: Option<(usize, f64)>, (j, &v)| match acc {
                Some((_, bv)) if bv <= v => acc,
                _ => Some((j, v)),
            },
        );
        indices[k] = match free {
            Some((j, _)) => {
                taken[j] = true;
                j
            }
            None => {
                unresolved += 1;
                best[k]
            }
        };
    }
    Resolution {
        prototypes: MedianPrototypes { indices },
        collisions_detected,
        collisions_unresolved: unresolved,
    }
}

#[derive(Debug, Clone)]
pub struct MedianTrainResult {
    pub prototypes: MedianPrototypes,
    pub assignment: Assignment,
    /// Quantization cost after each update.
    pub cost_trace: Vec<f64>,
    /// Number of prototype updates performed.
    pub iterations: usize,
    /// Summed over all updates.
    pub collisions_detected: usize,
    /// At the final update.
    pub collisions_unresolved: usize,
    pub history: Vec<Assignment>,
    pub timings: PhaseTimings,
}

/// Trains from K distinct seeded data points.
pub fn train_median(
    d: &DissimilarityMatrix,
    lattice: &Lattice,
    schedule: &NeighborhoodSchedule,
    seed: u64,
) -> Result<MedianTrainResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = MedianPrototypes::new(sample_indices(d.n(), lattice.k_units(), &mut rng), d.n())?;
    train_median_from(d, lattice, schedule, init)
}

/// Alternates assignment and median update. Stops after `t_max` updates, or
/// earlier once both the assignment and the neighborhood are unchanged (a
/// fixed point).
pub fn train_median_from(
    d: &DissimilarityMatrix,
    lattice: &Lattice,
    schedule: &NeighborhoodSchedule,
    init: MedianPrototypes,
) -> Result<MedianTrainResult> {
    if init.k_units() != lattice.k_units() {
        return Err(Error::DimensionMismatch {
            expected: lattice.k_units(),
            found: init.k_units(),
        });
    }
    let mut protos = init;
    let mut timings = PhaseTimings::default();
    let mut cost_trace = Vec::new();
    let mut history: Vec<Assignment> = Vec::new();
    let mut collisions_detected = 0;
    let mut collisions_unresolved = 0;
    let mut prev_h: Option<Array2<f64>> = None;
    for t in 0..schedule.t_max {
        let h = neighborhood(lattice, schedule, t)?;
        let assignment = timings.time_assignment(|| assign_all(&protos, d));
        if history.last() == Some(&assignment) && prev_h.as_ref() == Some(&h) {
            break;
        }
        let (resolution, cost) = timings.time_update(|| {
            let costs = weighted_costs(d, &assignment, &h);
            let resolution = resolve_collisions(&costs);
            let cost: f64 = resolution
                .prototypes
                .indices
                .iter()
                .enumerate()
                .map(|(k, &j)| costs[[k, j]])
                .sum();
            (resolution, cost)
        });
        collisions_detected += resolution.collisions_detected;
        collisions_unresolved = resolution.collisions_unresolved;
        protos = resolution.prototypes;
        cost_trace.push(cost);
        history.push(assignment);
        prev_h = Some(h);
    }
    let assignment = assign_all(&protos, d);
    Ok(MedianTrainResult {
        prototypes: protos,
        assignment,
        iterations: cost_trace.len(),
        cost_trace,
        collisions_detected,
        collisions_unresolved,
        history,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Topology;
    use ndarray::array;
    use proptest::prelude::*;

    fn d3() -> DissimilarityMatrix {
        DissimilarityMatrix::new(array![[0.0, 1.0, 9.0], [1.0, 0.0, 4.0], [9.0, 4.0, 0.0]]).unwrap()
    }

    #[test]
    fn bmu_examples() {
        let d = d3();
        let p = MedianPrototypes::new(vec![0, 2], 3).unwrap();
        assert_eq!(bmu_median(1, &p, &d), 0);
        let p = MedianPrototypes::new(vec![0, 1, 2], 3).unwrap();
        assert_eq!(bmu_median(2, &p, &d), 2);
        let p = MedianPrototypes::new(vec![1, 1], 3).unwrap();
        assert_eq!(bmu_median(0, &p, &d), 0);
    }

    #[test]
    fn single_unit_is_the_medoid() {
        let d = d3();
        let r = median_update(&d, &Assignment::new(vec![0, 0, 0]), &array![[1.0]]);
        assert_eq!(r.prototypes.indices, vec![1]);
        let costs = weighted_costs(&d, &Assignment::new(vec![0, 0, 0]), &array![[1.0]]);
        assert_eq!(costs.row(0).to_vec(), vec![10.0, 5.0, 13.0]);
    }

    #[test]
    fn single_point() {
        let d = DissimilarityMatrix::new(array![[0.0]]).unwrap();
        let h = Lattice::grid(1, 1, Topology::Rectangular).unwrap().neighborhood_at(1.0);
        let r = median_update(&d, &Assignment::new(vec![0]), &h);
        assert_eq!(r.prototypes.indices, vec![0]);
    }

    #[test]
    fn duplicate_weights_get_distinct_prototypes() {
        // Two units with identical neighborhood rows see identical costs.
        let d = d3();
        let h = array![[1.0, 1.0], [1.0, 1.0]];
        let r = median_update(&d, &Assignment::new(vec![0, 1, 0]), &h);
        assert_eq!(r.collisions_detected, 2);
        assert_eq!(r.collisions_unresolved, 0);
        assert_ne!(r.prototypes.indices[0], r.prototypes.indices[1]);
        // equal regret: unit 0 goes first and keeps the medoid
        assert_eq!(r.prototypes.indices, vec![1, 0]);
    }

    #[test]
    fn no_collision_is_plain_argmin() {
        let costs = array![[3.0, 1.0, 2.0], [0.5, 4.0, 4.0]];
        let r = resolve_collisions(&costs);
        assert_eq!(r.prototypes.indices, vec![1, 0]);
        assert_eq!(r.collisions_detected, 0);
    }

    #[test]
    fn larger_regret_keeps_contested_index() {
        let mut costs = Array2::from_elem((2, 8), 10.0);
        costs[[0, 5]] = 1.0;
        costs[[0, 2]] = 1.5; // regret 0.5
        costs[[1, 5]] = 1.0;
        costs[[1, 7]] = 4.0; // regret 3
        let r = resolve_collisions(&costs);
        assert_eq!(r.prototypes.indices, vec![2, 5]);
        assert_eq!(r.collisions_detected, 2);
    }

    #[test]
    fn pigeonhole_leaves_one_duplicate() {
        let costs = array![[1.0, 2.0], [1.0, 3.0], [1.0, 5.0]];
        let r = resolve_collisions(&costs);
        assert_eq!(r.collisions_unresolved, 1);
        let mut sorted = r.prototypes.indices.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, vec![0, 1]);
    }

    #[test]
    fn stable_start_stops_after_one_update() {
        let data = crate::synth::gaussian_blobs(30, &[[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]], 1.0, 5);
        let d = crate::dismat::squared_euclidean(&data);
        let lat = Lattice::grid(1, 3, Topology::Rectangular).unwrap();
        let sched = NeighborhoodSchedule::fixed(0.01, 10).unwrap();
        let first = train_median(&d, &lat, &sched, 1).unwrap();
        let again = train_median_from(&d, &lat, &sched, first.prototypes.clone()).unwrap();
        assert_eq!(again.iterations, 1);
        assert_eq!(again.prototypes, first.prototypes);
        assert_eq!(again.assignment, first.assignment);
    }

    #[test]
    fn single_unit_trace_is_medoid_cost() {
        let d = d3();
        let lat = Lattice::grid(1, 1, Topology::Rectangular).unwrap();
        let sched = NeighborhoodSchedule::fixed(1.0, 5).unwrap();
        let r = train_median(&d, &lat, &sched, 9).unwrap();
        assert_eq!(r.cost_trace[0], 5.0);
        assert_eq!(r.prototypes.indices, vec![1]);
    }

    proptest! {
        #[test]
        fn assigned_units_contain_their_prototype(seed in 0u64..100) {
            let d = crate::synth::random_dissimilarity(25, seed);
            let lat = Lattice::grid(2, 3, Topology::Rectangular).unwrap();
            let sched = NeighborhoodSchedule::new(1.5, 0.3, 8, crate::lattice::ScheduleMode::ExponentialDecay).unwrap();
            let r = train_median(&d, &lat, &sched, seed).unwrap();
            let mut distinct = r.prototypes.indices.clone();
            distinct.sort();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), 6);
            let counts = r.assignment.counts(6);
            for (k, &p) in r.prototypes.indices.iter().enumerate() {
                if counts[k] > 0 {
                    prop_assert_eq!(r.assignment.bmu[p], k);
                }
            }
        }
    }
}
