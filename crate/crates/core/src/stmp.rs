//! Soft topographic mapping for proximity data: mean-field deterministic
//! annealing with a fixed neighborhood.
//!
//! For a fixed inverse temperature β the solver iterates
//! soft assignments → mixing coefficients → mean field until the mean field
//! settles, then raises β geometrically. The mean field is computed as
//! (relational distances to the mixing columns) · hᵀ, which is exact and costs
//! O(N²K + NK²).

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::{argmin, Assignment};
use crate::dismat::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::relsom::relational_distances;

/// Power-iteration step limit.
pub const POWER_MAX_STEPS: usize = 10_000;
/// Relative residual at which power iteration stops.
pub const POWER_TOL: f64 = 1e-8;
/// Amplitude of the uniform noise used to initialize the mean field.
pub const INIT_NOISE: f64 = 1e-3;

/// Memberships γ (N×K) and the mean field e (N×K) they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub gamma: Array2<f64>,
    pub mean_field: Array2<f64>,
}

impl SoftAssignment {
    /// Per-row argmax of γ, ties to the smallest unit.
    pub fn crisp(&self) -> Assignment {
        Assignment::new(
            self.gamma
                .rows()
                .into_iter()
                .map(|r| argmin(r.iter().map(|g| -g)))
                .collect(),
        )
    }

    /// `Σ -γ log γ` over all entries.
    pub fn entropy(&self) -> f64 {
        self.gamma.iter().filter(|&&g| g > 0.0).map(|&g| -g * g.ln()).sum()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.gamma
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub beta0: f64,
    pub beta_factor: f64,
    pub beta_max: f64,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
}

impl AnnealingSchedule {
    pub fn new(beta0: f64, beta_factor: f64, beta_max: f64, inner_tol: f64, inner_max_iters: usize) -> Result<Self> {
        if !(beta0 > 0.0 && beta0 < beta_max) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < beta0 ({beta0}) < beta_max ({beta_max})"
            )));
        }
        if !(beta_factor > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta_factor {beta_factor} must exceed 1"
            )));
        }
        if !(inner_tol > 0.0) || inner_max_iters == 0 {
            return Err(Error::InvalidParameter(
                "inner loop needs a positive tolerance and iteration cap".into(),
            ));
        }
        Ok(Self {
            beta0,
            beta_factor,
            beta_max,
            inner_tol,
            inner_max_iters,
        })
    }

    /// β from `0.5 / λ_max` to `10⁴ / λ_max`, ×1.1 per step.
    pub fn for_matrix(d: &DissimilarityMatrix) -> Result<Self> {
        let beta_c = critical_beta(d)?;
        Self::new(0.5 * beta_c, 1.1, 1e4 * beta_c, 1e-6, 500)
    }

    /// The β values visited, in order.
    pub fn betas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut beta = self.beta0;
        while beta <= self.beta_max {
            out.push(beta);
            beta *= self.beta_factor;
        }
        out
    }
}

/// `b_js = Σ_k γ_jk h_ks / Σ_i Σ_k γ_ik h_ks`; columns of `b` sum to one.
pub fn mixing_coefficients(gamma: ArrayView2<'_, f64>, h: &Array2<f64>) -> Result<Array2<f64>> {
    let mut b = gamma.dot(h);
    for (s, mut col) in b.columns_mut().into_iter().enumerate() {
        let total = col.sum();
        if !(total > f64::MIN_POSITIVE) {
            return Err(Error::DegenerateColumn { column: s });
        }
        col /= total;
    }
    Ok(b)
}

/// `e_ik = Σ_s h_ks Σ_j b_js (D_ij - ½ Σ_l b_ls D_jl)`.
///
/// The inner sum over `j` is the relational distance from point `i` to the
/// coefficient vector `b_·s`, taken from [`relational_distances`].
pub fn mean_field(d: &DissimilarityMatrix, b: ArrayView2<'_, f64>, h: &Array2<f64>) -> Array2<f64> {
    relational_distances(d, b.t()).dot(&h.t())
}

/// Row-wise softmax of `-β e`, shifted by the row minimum.
pub fn soft_update(e: ArrayView2<'_, f64>, beta: f64) -> Array2<f64> {
    let mut gamma = e.to_owned();
    for mut row in gamma.rows_mut() {
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        row.mapv_inplace(|v| (-beta * (v - min)).exp());
        let total = row.sum();
        row /= total;
    }
    gamma
}

/// Dominant eigenvalue magnitude of a symmetric matrix by power iteration on
/// its square, which also converges when ±λ_max are both eigenvalues.
pub fn dominant_eigenvalue(values: ArrayView2<'_, f64>) -> Result<f64> {
    let n = values.nrows();
    let mut v = ndarray::Array1::from_shape_fn(n, |i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v /= v.dot(&v).sqrt();
    for _ in 0..POWER_MAX_STEPS {
        let w = values.dot(&values.dot(&v));
        let mu = v.dot(&w);
        if mu <= 0.0 {
            return Ok(0.0);
        }
        let r = &w - &(&v * mu);
        if r.dot(&r).sqrt() <= POWER_TOL * mu {
            return Ok(mu.sqrt());
        }
        let norm = w.dot(&w).sqrt();
        v = w / norm;
    }
    Err(Error::NoConvergence { steps: POWER_MAX_STEPS })
}

/// `1 / λ_max(D)`: the reference scale for the first phase transition.
pub fn critical_beta(d: &DissimilarityMatrix) -> Result<f64> {
    let lambda = dominant_eigenvalue(d.values())?;
    if lambda == 0.0 {
        return Err(Error::InvalidParameter(
            "dissimilarity matrix is identically zero".into(),
        ));
    }
    Ok(1.0 / lambda)
}

/// One row of the annealing trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StmpTraceRow {
    pub beta: f64,
    pub inner_iterations: usize,
    pub max_delta_e: f64,
    pub entropy: f64,
}

/// Statistics of one inner relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerStats {
    pub iterations: usize,
    pub max_delta_e: f64,
    /// Largest row-sum error of γ seen during the relaxation.
    pub gamma_drift: f64,
    /// Largest column-sum error of b seen during the relaxation.
    pub mixing_drift: f64,
}

/// Mean-field solver state.
pub struct StmpSolver<'a> {
    d: &'a DissimilarityMatrix,
    h: Array2<f64>,
    state: SoftAssignment,
    mixing: Array2<f64>,
}

impl<'a> StmpSolver<'a> {
    /// Starts from a mean field of seeded uniform noise in `[0, INIT_NOISE)`.
    pub fn new(d: &'a DissimilarityMatrix, h: Array2<f64>, seed: u64) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::InvalidParameter("neighborhood must be square".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = h.nrows();
        let e = Array2::from_shape_fn((d.n(), k), |_| INIT_NOISE * rng.random::<f64>());
        let gamma = Array2::from_elem((d.n(), k), 1.0 / k as f64);
        Ok(Self {
            d,
            mixing: Array2::from_elem((d.n(), k), 1.0 / d.n() as f64),
            h,
            state: SoftAssignment { gamma, mean_field: e },
        })
    }

    /// Iterates γ → b → e at fixed β until `max|Δe| < tol` or `max_iters`.
    pub fn relax(&mut self, beta: f64, tol: f64, max_iters: usize) -> Result<InnerStats> {
        let mut stats = InnerStats {
            iterations: 0,
            max_delta_e: f64::INFINITY,
            gamma_drift: 0.0,
            mixing_drift: 0.0,
        };
        while stats.iterations < max_iters {
            let gamma = soft_update(self.state.mean_field.view(), beta);
            let b = mixing_coefficients(gamma.view(), &self.h)?;
            let e = mean_field(self.d, b.view(), &self.h);
            stats.max_delta_e = (&e - &self.state.mean_field).iter().fold(0.0, |m, v| m.max(v.abs()));
            self.state = SoftAssignment { gamma, mean_field: e };
            stats.gamma_drift = stats.gamma_drift.max(self.state.max_row_sum_error());
            stats.mixing_drift = stats.mixing_drift.max(
                b.columns()
                    .into_iter()
                    .map(|c| (c.sum() - 1.0).abs())
                    .fold(0.0, f64::max),
            );
            self.mixing = b;
            stats.iterations += 1;
            if stats.max_delta_e < tol {
                break;
            }
        }
        Ok(stats)
    }

    pub fn state(&self) -> &SoftAssignment {
        &self.state
    }

    /// Current mixing coefficients b (N×K); column `s` is the coefficient
    /// vector of prototype `s`.
    pub fn mixing(&self) -> &Array2<f64> {
        &self.mixing
    }

    pub fn neighborhood(&self) -> &Array2<f64> {
        &self.h
    }
}

#[derive(Debug, Clone)]
pub struct StmpResult {
    pub soft: SoftAssignment,
    pub assignment: Assignment,
    /// Final mixing coefficients, N×K.
    pub mixing: Array2<f64>,
    pub trace: Vec<StmpTraceRow>,
    pub gamma_drift: f64,
    pub mixing_drift: f64,
}

/// Full annealing run with the fixed neighborhood `h`.
pub fn train_stmp(
    d: &DissimilarityMatrix,
    h: &Array2<f64>,
    annealing: &AnnealingSchedule,
    seed: u64,
) -> Result<StmpResult> {
    let mut solver = StmpSolver::new(d, h.clone(), seed)?;
    let mut trace = Vec::new();
    let (mut gamma_drift, mut mixing_drift) = (0.0f64, 0.0f64);
    for beta in annealing.betas() {
        let stats = solver.relax(beta, annealing.inner_tol, annealing.inner_max_iters)?;
        gamma_drift = gamma_drift.max(stats.gamma_drift);
        mixing_drift = mixing_drift.max(stats.mixing_drift);
        trace.push(StmpTraceRow {
            beta,
            inner_iterations: stats.iterations,
            max_delta_e: stats.max_delta_e,
            entropy: solver.state().entropy(),
        });
    }
    let soft = solver.state().clone();
    Ok(StmpResult {
        assignment: soft.crisp(),
        mixing: solver.mixing().clone(),
        soft,
        trace,
        gamma_drift,
        mixing_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dismat::squared_euclidean;
    use crate::lattice::{Lattice, Topology};
    use ndarray::array;

    fn d3() -> DissimilarityMatrix {
        DissimilarityMatrix::new(array![[0.0, 1.0, 9.0], [1.0, 0.0, 4.0], [9.0, 4.0, 0.0]]).unwrap()
    }

    #[test]
    fn mixing_examples() {
        let h3 = Lattice::grid(1, 3, Topology::Rectangular).unwrap().neighborhood_at(1.0);
        let uniform = Array2::from_elem((4, 3), 1.0 / 3.0);
        let b = mixing_coefficients(uniform.view(), &h3).unwrap();
        assert!(b.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let gamma = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let b = mixing_coefficients(gamma.view(), &Array2::eye(2)).unwrap();
        assert_eq!(b.column(0).to_vec(), vec![0.5, 0.5, 0.0]);
        assert_eq!(b.column(1).to_vec(), vec![0.0, 0.0, 1.0]);

        let empty = array![[1.0, 0.0], [1.0, 0.0]];
        assert!(matches!(
            mixing_coefficients(empty.view(), &Array2::eye(2)),
            Err(Error::DegenerateColumn { column: 1 })
        ));
    }

    #[test]
    fn mean_field_examples() {
        let d = d3();
        let b = Array2::from_elem((3, 1), 1.0 / 3.0);
        let e = mean_field(&d, b.view(), &array![[1.0]]);
        assert!((e[[0, 0]] - 16.0 / 9.0).abs() < 1e-12);
        // point 0 to the mean 4/3
        assert!((e[[0, 0]] - (4.0f64 / 3.0).powi(2)).abs() < 1e-12);

        let b = array![[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]];
        let e = mean_field(&d, b.view(), &Array2::eye(2));
        for i in 0..3 {
            assert_eq!(e[[i, 0]], d.get(i, 1));
            assert_eq!(e[[i, 1]], d.get(i, 0));
        }
    }

    #[test]
    fn soft_update_examples() {
        let g = soft_update(array![[3.0, 3.0, 3.0]].view(), 2.0);
        assert!(g.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let g = soft_update(array![[0.0, 2f64.ln()]].view(), 1.0);
        assert!((g[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
        let g = soft_update(array![[1.0, 0.5, 2.0]].view(), 1e6);
        assert!((g[[0, 1]] - 1.0).abs() < 1e-6 && g[[0, 0]] < 1e-6 && g[[0, 2]] < 1e-6);
        let g = soft_update(array![[1e6, -1e6]].view(), 1e3);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn critical_beta_examples() {
        let d = DissimilarityMatrix::new(array![[0.0, 2.0], [2.0, 0.0]]).unwrap();
        assert!((critical_beta(&d).unwrap() - 0.5).abs() < 1e-12);
        let d = DissimilarityMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!((critical_beta(&d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation_and_betas() {
        assert!(AnnealingSchedule::new(1.0, 1.1, 0.5, 1e-6, 10).is_err());
        assert!(AnnealingSchedule::new(1.0, 1.0, 5.0, 1e-6, 10).is_err());
        let s = AnnealingSchedule::new(1.0, 2.0, 8.0, 1e-6, 10).unwrap();
        assert_eq!(s.betas(), vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn runs_are_deterministic() {
        let data = crate::synth::gaussian_blobs(20, &[[0.0, 0.0], [6.0, 0.0]], 1.0, 3);
        let d = squared_euclidean(&data);
        let h = Lattice::grid(2, 1, Topology::Rectangular).unwrap().neighborhood_at(0.3);
        let beta_c = critical_beta(&d).unwrap();
        let sched = AnnealingSchedule::new(0.5 * beta_c, 1.5, 100.0 * beta_c, 1e-6, 200).unwrap();
        let a = train_stmp(&d, &h, &sched, 8).unwrap();
        let b = train_stmp(&d, &h, &sched, 8).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.soft, b.soft);
    }
}
