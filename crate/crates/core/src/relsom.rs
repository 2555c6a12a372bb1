//! Relational and kernel SOM, batch and online.
//!
//! A prototype is a coefficient row `α_k` over the data points, summing to
//! one. Point-to-prototype distances come from the dissimilarity alone,
//! `(Dα)_i - ½ αᵀDα`, or from a kernel, `K_ii - 2(Kα)_i + αᵀKα`. Both are
//! the same quantity when `D` is derived from `K`, so the two backends share
//! one trainer through [`CoefficientGeometry`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::{argmin, sample_indices, Assignment, PhaseTimings};
use crate::dismat::{kernel_to_dissimilarity, DissimilarityMatrix, KernelMatrix, VectorDataset};
use crate::error::{Error, Result};
use crate::lattice::{neighborhood, Lattice, Schedules};
use crate::vectorsom::{TrainMode, VectorPrototypes, EMPTY_WEIGHT};

/// Allowed deviation of a coefficient row sum from one.
pub const COEFF_SUM_TOL: f64 = 1e-12;

fn check_sum(alpha: ArrayView1<'_, f64>) -> Result<()> {
    let sum = alpha.sum();
    if (sum - 1.0).abs() > COEFF_SUM_TOL {
        return Err(Error::CoefficientSum { sum });
    }
    Ok(())
}

/// K×N row-stochastic coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPrototypes {
    alphas: Array2<f64>,
}

impl CoefficientPrototypes {
    pub fn new(alphas: Array2<f64>) -> Result<Self> {
        for row in alphas.rows() {
            check_sum(row)?;
        }
        Ok(Self { alphas })
    }

    /// Row `k` is the indicator of data point `indices[k]`.
    pub fn indicators(indices: &[usize], n: usize) -> Self {
        let mut alphas = Array2::zeros((indices.len(), n));
        for (k, &i) in indices.iter().enumerate() {
            alphas[[k, i]] = 1.0;
        }
        Self { alphas }
    }

    /// Rows with seeded uniform random weights, normalized.
    pub fn random(k_units: usize, n: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            alphas: crate::synth::random_coefficients(k_units, n, rng),
        }
    }

    pub fn k_units(&self) -> usize {
        self.alphas.nrows()
    }

    pub fn n(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn alphas(&self) -> ArrayView2<'_, f64> {
        self.alphas.view()
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.alphas.row(k)
    }

    /// Largest |Σ_j α_kj - 1| over rows.
    pub fn max_row_sum_error(&self) -> f64 {
        self.alphas
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Explicit prototypes `Σ_i α_ki x_i` for vector data.
    pub fn implied_prototypes(&self, data: &VectorDataset) -> VectorPrototypes {
        VectorPrototypes::new(self.alphas.dot(&data.points())).expect("finite combination")
    }
}

/// Distance from data points to coefficient prototypes.
pub trait CoefficientGeometry {
    fn n(&self) -> usize;

    /// `αᵀGα` for each row of `alphas`, where G is the backend's matrix.
    fn self_terms(&self, alphas: ArrayView2<'_, f64>) -> Vec<f64>;

    /// N×K distances from every point to every row of `alphas`.
    fn distances(&self, alphas: ArrayView2<'_, f64>) -> Array2<f64>;

    /// Distance from point `i` to `alpha`, given its cached self term.
    fn point_distance(&self, alpha: ArrayView1<'_, f64>, self_term: f64, i: usize) -> f64;
}

fn quadratic_forms(matrix: ArrayView2<'_, f64>, alphas: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<f64>) {
    let product = matrix.dot(&alphas.t());
    let forms = alphas
        .rows()
        .into_iter()
        .zip(product.columns())
        .map(|(a, col)| a.dot(&col))
        .collect();
    (product, forms)
}

/// Distances `(Dα)_i - ½ αᵀDα` from a dissimilarity matrix.
#[derive(Debug, Clone, Copy)]
pub struct RelationalGeometry<'a> {
    pub d: &'a DissimilarityMatrix,
}

impl CoefficientGeometry for RelationalGeometry<'_> {
    fn n(&self) -> usize {
        self.d.n()
    }

    fn self_terms(&self, alphas: ArrayView2<'_, f64>) -> Vec<f64> {
        quadratic_forms(self.d.values(), alphas).1
    }

    fn distances(&self, alphas: ArrayView2<'_, f64>) -> Array2<f64> {
        let (mut product, forms) = quadratic_forms(self.d.values(), alphas);
        for (mut col, s) in product.columns_mut().into_iter().zip(forms) {
            col -= 0.5 * s;
        }
        product
    }

    fn point_distance(&self, alpha: ArrayView1<'_, f64>, self_term: f64, i: usize) -> f64 {
        self.d.row(i).dot(&alpha) - 0.5 * self_term
    }
}

/// Distances `K_ii - 2(Kα)_i + αᵀKα` from a kernel matrix.
#[derive(Debug, Clone, Copy)]
pub struct KernelGeometry<'a> {
    pub k: &'a KernelMatrix,
}

impl CoefficientGeometry for KernelGeometry<'_> {
    fn n(&self) -> usize {
        self.k.n()
    }

    fn self_terms(&self, alphas: ArrayView2<'_, f64>) -> Vec<f64> {
        quadratic_forms(self.k.values(), alphas).1
    }

    fn distances(&self, alphas: ArrayView2<'_, f64>) -> Array2<f64> {
        let (product, forms) = quadratic_forms(self.k.values(), alphas);
        let kv = self.k.values();
        Array2::from_shape_fn(product.dim(), |(i, k)| kv[[i, i]] - 2.0 * product[[i, k]] + forms[k])
    }

    fn point_distance(&self, alpha: ArrayView1<'_, f64>, self_term: f64, i: usize) -> f64 {
        self.k.get(i, i) - 2.0 * self.k.values().row(i).dot(&alpha) + self_term
    }
}

/// `(Dα)_i - ½ αᵀDα`. Negative values are possible for non-Euclidean `D`.
pub fn relational_distance(d: &DissimilarityMatrix, alpha: ArrayView1<'_, f64>, i: usize) -> Result<f64> {
    check_sum(alpha)?;
    let dv = d.values();
    let self_term = alpha.dot(&dv.dot(&alpha));
    Ok(dv.row(i).dot(&alpha) - 0.5 * self_term)
}

/// N×K matrix of relational distances to each row of `coeffs` (K×N).
pub fn relational_distances(d: &DissimilarityMatrix, coeffs: ArrayView2<'_, f64>) -> Array2<f64> {
    RelationalGeometry { d }.distances(coeffs)
}

/// `K_ii - 2 Σ_j α_j K_ij + Σ_jl α_j α_l K_jl`.
pub fn kernel_distance(k: &KernelMatrix, alpha: ArrayView1<'_, f64>, i: usize) -> Result<f64> {
    check_sum(alpha)?;
    let kv = k.values();
    Ok(kv[[i, i]] - 2.0 * kv.row(i).dot(&alpha) + alpha.dot(&kv.dot(&alpha)))
}

/// Evaluates the relational distance on the kernel-derived dissimilarity and
/// the kernel distance, and compares them.
pub fn verify_equivalence(k: &KernelMatrix, alpha: ArrayView1<'_, f64>, i: usize, tol: f64) -> bool {
    equivalence_gap(k, alpha, i).is_some_and(|gap| gap <= tol)
}

/// `|lhs - rhs|` of the relational/kernel distance identity, or `None` when
/// the inputs are invalid.
pub fn equivalence_gap(k: &KernelMatrix, alpha: ArrayView1<'_, f64>, i: usize) -> Option<f64> {
    let d = kernel_to_dissimilarity(k).ok()?;
    let lhs = relational_distance(&d, alpha, i).ok()?;
    let rhs = kernel_distance(k, alpha, i).ok()?;
    Some((lhs - rhs).abs())
}

/// Squared distance between two implied prototypes, `-½ (a-b)ᵀD(a-b)`.
pub fn prototype_pairwise_dissimilarity(
    d: &DissimilarityMatrix,
    alpha_a: ArrayView1<'_, f64>,
    alpha_b: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_sum(alpha_a)?;
    check_sum(alpha_b)?;
    let diff = &alpha_a - &alpha_b;
    Ok(-0.5 * diff.dot(&d.values().dot(&diff)))
}

pub fn bmu_relational(d: &DissimilarityMatrix, protos: &CoefficientPrototypes, i: usize) -> usize {
    let geom = RelationalGeometry { d };
    let terms = geom.self_terms(protos.alphas());
    argmin(
        protos
            .alphas
            .rows()
            .into_iter()
            .zip(terms)
            .map(|(a, s)| geom.point_distance(a, s, i)),
    )
}

/// Crisp assignment from an N×K distance matrix.
pub fn assign_from_distances(distances: &Array2<f64>) -> Assignment {
    Assignment::new(
        distances
            .rows()
            .into_iter()
            .map(|r| argmin(r.iter().cloned()))
            .collect(),
    )
}

/// `α_ki = h_{k c_i} / Σ_l h_{k c_l}`. Units whose weight underflows keep
/// their previous row; their count is returned.
pub fn batch_update(
    assignment: &Assignment,
    h: &Array2<f64>,
    previous: &CoefficientPrototypes,
) -> (CoefficientPrototypes, usize) {
    let mut alphas = previous.alphas.clone();
    let mut empty = 0;
    for (k, mut row) in alphas.rows_mut().into_iter().enumerate() {
        let weights: Array1<f64> = assignment.bmu.iter().map(|&c| h[[k, c]]).collect();
        let total = weights.sum();
        if total < EMPTY_WEIGHT {
            empty += 1;
            continue;
        }
        row.assign(&(weights / total));
    }
    (CoefficientPrototypes { alphas }, empty)
}

/// One batch relational iteration at step `t`.
pub fn batch_relational_step(
    d: &DissimilarityMatrix,
    protos: &CoefficientPrototypes,
    lattice: &Lattice,
    schedules: &Schedules,
    t: usize,
) -> Result<(CoefficientPrototypes, Assignment)> {
    let h = neighborhood(lattice, &schedules.neighborhood, t)?;
    let assignment = assign_from_distances(&relational_distances(d, protos.alphas()));
    let (next, _) = batch_update(&assignment, &h, protos);
    Ok((next, assignment))
}

/// `α_kj += ε h_{k c}(δ_ij - α_kj)` for every unit.
pub fn online_update(
    protos: &mut CoefficientPrototypes,
    i: usize,
    bmu: usize,
    h: &Array2<f64>,
    eps: f64,
) -> Vec<usize> {
    let mut touched = Vec::new();
    for (k, mut row) in protos.alphas.rows_mut().into_iter().enumerate() {
        let rate = eps * h[[k, bmu]];
        if rate == 0.0 {
            continue;
        }
        row.mapv_inplace(|a| a - rate * a);
        row[i] += rate;
        touched.push(k);
    }
    touched
}

/// One online presentation of point `i` at step `t`.
pub fn online_relational_step(
    d: &DissimilarityMatrix,
    protos: &CoefficientPrototypes,
    i: usize,
    lattice: &Lattice,
    schedules: &Schedules,
    t: usize,
) -> Result<CoefficientPrototypes> {
    let h = neighborhood(lattice, &schedules.neighborhood, t)?;
    let eps = schedules.learning_rate.eps_at(t)?;
    let bmu = bmu_relational(d, protos, i);
    let mut next = protos.clone();
    online_update(&mut next, i, bmu, &h, eps);
    Ok(next)
}

/// Online trainer state with cached self terms.
///
/// Rows touched by an update are marked stale; their self terms are
/// recomputed at the next BMU search. Since a Gaussian neighborhood touches
/// every row, each presentation costs O(N²K) like a batch iteration.
pub struct OnlineState<'g, G: CoefficientGeometry + ?Sized> {
    geom: &'g G,
    protos: CoefficientPrototypes,
    self_terms: Vec<f64>,
    stale: Vec<bool>,
    pub negative_distances: usize,
}

impl<'g, G: CoefficientGeometry + ?Sized> OnlineState<'g, G> {
    pub fn new(geom: &'g G, protos: CoefficientPrototypes) -> Self {
        let self_terms = geom.self_terms(protos.alphas());
        let k = protos.k_units();
        Self {
            geom,
            protos,
            self_terms,
            stale: vec![false; k],
            negative_distances: 0,
        }
    }

    fn refresh(&mut self) {
        let stale: Vec<usize> = (0..self.stale.len()).filter(|&k| self.stale[k]).collect();
        if stale.is_empty() {
            return;
        }
        let rows = self.protos.alphas.select(Axis(0), &stale);
        for (k, s) in stale.into_iter().zip(self.geom.self_terms(rows.view())) {
            self.self_terms[k] = s;
            self.stale[k] = false;
        }
    }

    /// BMU of point `i` under the current prototypes.
    pub fn bmu(&mut self, i: usize) -> usize {
        self.refresh();
        let mut negatives = 0;
        let best = argmin(
            self.protos
                .alphas
                .rows()
                .into_iter()
                .zip(&self.self_terms)
                .map(|(a, &s)| {
                    let dist = self.geom.point_distance(a, s, i);
                    negatives += (dist < 0.0) as usize;
                    dist
                }),
        );
        self.negative_distances += negatives;
        best
    }

    pub fn update(&mut self, i: usize, bmu: usize, h: &Array2<f64>, eps: f64) {
        for k in online_update(&mut self.protos, i, bmu, h, eps) {
            self.stale[k] = true;
        }
    }

    pub fn step(&mut self, i: usize, h: &Array2<f64>, eps: f64) -> usize {
        let bmu = self.bmu(i);
        self.update(i, bmu, h, eps);
        bmu
    }

    pub fn prototypes(&self) -> &CoefficientPrototypes {
        &self.protos
    }

    pub fn into_prototypes(self) -> CoefficientPrototypes {
        self.protos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Indicators of K distinct seeded data points.
    #[default]
    Indicators,
    /// Seeded random convex combinations.
    Random,
}

#[derive(Debug, Clone)]
pub struct CoefficientTrainResult {
    pub prototypes: CoefficientPrototypes,
    pub assignment: Assignment,
    /// Quantization cost `Σ_i Σ_k h_{k c_i} d(x_i, α_k)` per iteration (batch:
    /// before the update; online: after each epoch).
    pub criterion_trace: Vec<f64>,
    pub history: Vec<Assignment>,
    pub iterations: usize,
    pub negative_distances: usize,
    pub empty_units: usize,
    pub timings: PhaseTimings,
}

fn quantization_from_distances(distances: &Array2<f64>, assignment: &Assignment, h: &Array2<f64>) -> f64 {
    assignment
        .bmu
        .iter()
        .enumerate()
        .map(|(i, &c)| (0..h.nrows()).map(|k| h[[k, c]] * distances[[i, k]]).sum::<f64>())
        .sum()
}

fn count_negative(distances: &Array2<f64>) -> usize {
    distances.iter().filter(|&&v| v < 0.0).count()
}

/// Initial prototypes and the generator that continues into online
/// presentations.
pub fn initial_prototypes(n: usize, k_units: usize, seed: u64, init: InitMode) -> (CoefficientPrototypes, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = match init {
        InitMode::Indicators => CoefficientPrototypes::indicators(&sample_indices(n, k_units, &mut rng), n),
        InitMode::Random => CoefficientPrototypes::random(k_units, n, &mut rng),
    };
    (protos, rng)
}

/// Generic coefficient-prototype trainer for any geometry.
pub fn train_coefficients<G: CoefficientGeometry + ?Sized>(
    geom: &G,
    lattice: &Lattice,
    schedules: &Schedules,
    seed: u64,
    mode: TrainMode,
    init: InitMode,
) -> Result<CoefficientTrainResult> {
    let (protos, mut rng) = initial_prototypes(geom.n(), lattice.k_units(), seed, init);
    train_coefficients_from(geom, lattice, schedules, protos, &mut rng, mode)
}

/// Batch mode stops at `t_max` or at a fixed point (unchanged assignment
/// under an unchanged neighborhood). Online mode runs `t_max` epochs of N
/// uniformly drawn presentations.
pub fn train_coefficients_from<G: CoefficientGeometry + ?Sized>(
    geom: &G,
    lattice: &Lattice,
    schedules: &Schedules,
    protos: CoefficientPrototypes,
    rng: &mut ChaCha8Rng,
    mode: TrainMode,
) -> Result<CoefficientTrainResult> {
    if protos.k_units() != lattice.k_units() || protos.n() != geom.n() {
        return Err(Error::DimensionMismatch {
            expected: lattice.k_units() * geom.n(),
            found: protos.k_units() * protos.n(),
        });
    }
    let n = geom.n();
    let mut timings = PhaseTimings::default();
    let mut criterion_trace = Vec::new();
    let mut history: Vec<Assignment> = Vec::new();
    let mut negative_distances = 0;
    let mut empty_units = 0;
    let mut protos = protos;
    match mode {
        TrainMode::Batch => {
            let mut prev_h: Option<Array2<f64>> = None;
            for t in 0..schedules.t_max() {
                let h = neighborhood(lattice, &schedules.neighborhood, t)?;
                let (distances, assignment) = timings.time_assignment(|| {
                    let distances = geom.distances(protos.alphas());
                    let assignment = assign_from_distances(&distances);
                    (distances, assignment)
                });
                if history.last() == Some(&assignment) && prev_h.as_ref() == Some(&h) {
                    break;
                }
                negative_distances += count_negative(&distances);
                criterion_trace.push(quantization_from_distances(&distances, &assignment, &h));
                let (next, empty) = timings.time_update(|| batch_update(&assignment, &h, &protos));
                empty_units = empty;
                protos = next;
                history.push(assignment);
                prev_h = Some(h);
            }
        }
        TrainMode::Online => {
            let mut state = OnlineState::new(geom, protos);
            for t in 0..schedules.t_max() {
                let h = neighborhood(lattice, &schedules.neighborhood, t)?;
                let eps = schedules.learning_rate.eps_at(t)?;
                for _ in 0..n {
                    let i = rng.random_range(0..n);
                    let bmu = timings.time_assignment(|| state.bmu(i));
                    timings.time_update(|| state.update(i, bmu, &h, eps));
                }
                let distances = geom.distances(state.prototypes().alphas());
                let assignment = assign_from_distances(&distances);
                criterion_trace.push(quantization_from_distances(&distances, &assignment, &h));
                history.push(assignment);
            }
            negative_distances = state.negative_distances;
            protos = state.into_prototypes();
        }
    }
    let assignment = assign_from_distances(&geom.distances(protos.alphas()));
    Ok(CoefficientTrainResult {
        prototypes: protos,
        assignment,
        iterations: criterion_trace.len(),
        criterion_trace,
        history,
        negative_distances,
        empty_units,
        timings,
    })
}

/// Relational SOM on a dissimilarity matrix.
pub fn train_relational(
    d: &DissimilarityMatrix,
    lattice: &Lattice,
    schedules: &Schedules,
    seed: u64,
    mode: TrainMode,
    init: InitMode,
) -> Result<CoefficientTrainResult> {
    train_coefficients(&RelationalGeometry { d }, lattice, schedules, seed, mode, init)
}

/// Kernel SOM on a kernel matrix.
pub fn train_kernel(
    k: &KernelMatrix,
    lattice: &Lattice,
    schedules: &Schedules,
    seed: u64,
    mode: TrainMode,
    init: InitMode,
) -> Result<CoefficientTrainResult> {
    train_coefficients(&KernelGeometry { k }, lattice, schedules, seed, mode, init)
}
