//! Classic batch and online SOM on vector data.
//!
//! This is the reference the relational trainers are checked against: on a
//! squared-Euclidean dissimilarity, relational prototypes `Σ_i α_ki x_i` must
//! coincide with the prototypes computed here.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::{argmin, sample_indices, Assignment, PhaseTimings};
use crate::dismat::VectorDataset;
use crate::error::{Error, Result};
use crate::lattice::{neighborhood, Lattice, NeighborhoodSchedule, Schedules};

/// Total neighborhood weight below which a unit counts as empty.
pub const EMPTY_WEIGHT: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Batch,
    Online,
}

/// K prototypes in R^p, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPrototypes {
    values: Array2<f64>,
}

impl VectorPrototypes {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("prototype entries must be finite".into()));
        }
        Ok(Self { values })
    }

    /// Prototypes placed on the given data points.
    pub fn from_points(data: &VectorDataset, indices: &[usize]) -> Self {
        Self {
            values: data.points().select(Axis(0), indices),
        }
    }

    pub fn k_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `argmin_k |x - m_k|²`, smallest index on ties.
pub fn bmu_vector(x: ArrayView1<'_, f64>, protos: &VectorPrototypes) -> Result<usize> {
    if x.len() != protos.dim() {
        return Err(Error::DimensionMismatch {
            expected: protos.dim(),
            found: x.len(),
        });
    }
    Ok(argmin(protos.values.rows().into_iter().map(|m| sq_dist(x, m))))
}

pub fn assign_all(data: &VectorDataset, protos: &VectorPrototypes) -> Result<Assignment> {
    (0..data.n())
        .map(|i| bmu_vector(data.point(i), protos))
        .collect::<Result<Vec<_>>>()
        .map(Assignment::new)
}

/// Weighted-average update `m_k = Σ_i h_{k c_i} x_i / Σ_i h_{k c_i}`.
/// Units whose total weight underflows keep their previous prototype; the
/// number of such units is returned alongside.
pub fn batch_update(
    data: &VectorDataset,
    assignment: &Assignment,
    h: &Array2<f64>,
    previous: &VectorPrototypes,
) -> (VectorPrototypes, usize) {
    let k_units = h.nrows();
    let weights = Array2::from_shape_fn((k_units, data.n()), |(k, i)| h[[k, assignment.bmu[i]]]);
    let sums = weights.dot(&data.points());
    let mut values = previous.values.clone();
    let mut empty = 0;
    for k in 0..k_units {
        let total: f64 = weights.row(k).sum();
        if total < EMPTY_WEIGHT {
            empty += 1;
            continue;
        }
        values.row_mut(k).assign(&(&sums.row(k) / total));
    }
    (VectorPrototypes { values }, empty)
}

/// One batch iteration: BMUs from the current prototypes, then the update.
pub fn batch_step(
    data: &VectorDataset,
    protos: &VectorPrototypes,
    lattice: &Lattice,
    schedule: &NeighborhoodSchedule,
    t: usize,
) -> Result<(VectorPrototypes, Assignment)> {
    let h = neighborhood(lattice, schedule, t)?;
    let assignment = assign_all(data, protos)?;
    let (next, _) = batch_update(data, &assignment, &h, protos);
    Ok((next, assignment))
}

/// `m_k += eps · h_kc · (x - m_k)` for every unit, in place.
pub fn online_update(protos: &mut VectorPrototypes, x: ArrayView1<'_, f64>, h: &Array2<f64>, bmu: usize, eps: f64) {
    for (k, mut m) in protos.values.rows_mut().into_iter().enumerate() {
        let rate = eps * h[[k, bmu]];
        if rate == 0.0 {
            continue;
        }
        m.zip_mut_with(&x, |mk, &xj| *mk += rate * (xj - *mk));
    }
}

/// One stochastic presentation of `x` at step `t`.
pub fn online_step(
    x: ArrayView1<'_, f64>,
    protos: &VectorPrototypes,
    lattice: &Lattice,
    schedules: &Schedules,
    t: usize,
) -> Result<VectorPrototypes> {
    let h = neighborhood(lattice, &schedules.neighborhood, t)?;
    let eps = schedules.learning_rate.eps_at(t)?;
    let bmu = bmu_vector(x, protos)?;
    let mut next = protos.clone();
    online_update(&mut next, x, &h, bmu, eps);
    Ok(next)
}

/// SOM energy `Σ_k Σ_i h_{k c_i} |m_k - x_i|²`.
pub fn energy(data: &VectorDataset, protos: &VectorPrototypes, assignment: &Assignment, h: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (i, &c) in assignment.bmu.iter().enumerate() {
        for (k, m) in protos.values.rows().into_iter().enumerate() {
            total += h[[k, c]] * sq_dist(data.point(i), m);
        }
    }
    total
}

#[derive(Debug, Clone)]
pub struct VectorTrainResult {
    pub prototypes: VectorPrototypes,
    pub assignment: Assignment,
    pub energy_trace: Vec<f64>,
    /// Batch: the BMUs used by each iteration. Online: BMUs after each epoch.
    pub history: Vec<Assignment>,
    pub iterations: usize,
    pub empty_units: usize,
    pub timings: PhaseTimings,
}

/// Trains from `K` seeded data points.
pub fn train(
    data: &VectorDataset,
    lattice: &Lattice,
    schedules: &Schedules,
    seed: u64,
    mode: TrainMode,
) -> Result<VectorTrainResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = sample_indices(data.n(), lattice.k_units(), &mut rng);
    let protos = VectorPrototypes::from_points(data, &init);
    train_from(data, lattice, schedules, protos, &mut rng, mode)
}

/// Trains from explicit prototypes. `rng` drives online presentations.
pub fn train_from(
    data: &VectorDataset,
    lattice: &Lattice,
    schedules: &Schedules,
    mut protos: VectorPrototypes,
    rng: &mut ChaCha8Rng,
    mode: TrainMode,
) -> Result<VectorTrainResult> {
    if protos.k_units() != lattice.k_units() {
        return Err(Error::DimensionMismatch {
            expected: lattice.k_units(),
            found: protos.k_units(),
        });
    }
    if protos.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: protos.dim(),
        });
    }
    let n = data.n();
    let mut timings = PhaseTimings::default();
    let mut energy_trace = Vec::new();
    let mut history = Vec::new();
    let mut empty_units = 0;
    let t_max = schedules.t_max();
    for t in 0..t_max {
        let h = neighborhood(lattice, &schedules.neighborhood, t)?;
        match mode {
            TrainMode::Batch => {
                let assignment = timings.time_assignment(|| assign_all(data, &protos))?;
                let (next, empty) = timings.time_update(|| batch_update(data, &assignment, &h, &protos));
                empty_units = empty;
                protos = next;
                energy_trace.push(energy(data, &protos, &assignment, &h));
                history.push(assignment);
            }
            TrainMode::Online => {
                let eps = schedules.learning_rate.eps_at(t)?;
                for _ in 0..n {
                    let i = rng.random_range(0..n);
                    let x = data.point(i);
                    let bmu = timings.time_assignment(|| bmu_vector(x, &protos))?;
                    timings.time_update(|| online_update(&mut protos, x, &h, bmu, eps));
                }
                let assignment = assign_all(data, &protos)?;
                energy_trace.push(energy(data, &protos, &assignment, &h));
                history.push(assignment);
            }
        }
    }
    let assignment = assign_all(data, &protos)?;
    Ok(VectorTrainResult {
        prototypes: protos,
        assignment,
        energy_trace,
        history,
        iterations: t_max,
        empty_units,
        timings,
    })
}

/// Per-unit means of a crisp partition; empty clusters return `None`.
pub fn cluster_means(data: &VectorDataset, assignment: &Assignment, k_units: usize) -> Vec<Option<Array1<f64>>> {
    let mut sums = vec![Array1::<f64>::zeros(data.dim()); k_units];
    let counts = assignment.counts(k_units);
    for (i, &c) in assignment.bmu.iter().enumerate() {
        sums[c] += &data.point(i);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}
