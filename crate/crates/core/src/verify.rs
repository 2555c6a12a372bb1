//! Seeded randomized property suites: identities and bounds that must hold
//! for any input, checked on generated fixtures.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dismat::{kernel_to_dissimilarity, squared_euclidean, DissimilarityMatrix, KernelMatrix, VectorDataset};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, LearningRateSchedule, NeighborhoodSchedule, Schedules, Topology};
use crate::nystrom::{approx_relational_distance, nystrom_fit, nystrom_fit_dissimilarity};
use crate::quality::{triangle_bound_sides, verify_koenig_huygens, verify_triangle_bound};
use crate::relsom::{
    assign_from_distances, equivalence_gap, relational_distance, relational_distances, train_kernel, train_relational,
    InitMode,
};
use crate::stmp::{critical_beta, mean_field, mixing_coefficients, soft_update, StmpSolver};
use crate::synth::{gaussian_blobs, random_coefficients, random_psd_kernel, random_tree_metric};
use crate::vectorsom::TrainMode;

pub const SUITES: &[&str] = &["equivalence", "kh", "triangle", "stmp-limit", "nystrom"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn run_suite(suite: &str, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        "equivalence" => equivalence(seed)?,
        "kh" => kh(seed)?,
        "triangle" => triangle(seed)?,
        "stmp-limit" => stmp_limit(seed)?,
        "nystrom" => nystrom(seed)?,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown suite {other:?}; known: {}",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: suite.to_string(),
        seed,
        checks,
    })
}

fn small_schedules(lattice: &Lattice, t_max: usize) -> Result<Schedules> {
    Ok(Schedules {
        neighborhood: NeighborhoodSchedule::for_lattice(lattice, t_max)?,
        learning_rate: LearningRateSchedule::new(0.5, 0.01, t_max)?,
    })
}

/// Relational distance on `D_K` against the kernel distance on `K`, and
/// kernel versus relational training on 50 random kernels.
fn equivalence(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = Lattice::grid(2, 2, Topology::Rectangular)?;
    let schedules = small_schedules(&lattice, 10)?;
    let (mut max_gap, mut triples) = (0.0f64, 0usize);
    let (mut same_assign, mut max_coeff_diff) = (true, 0.0f64);
    for trial in 0..50u64 {
        let n: usize = 30;
        let k = random_psd_kernel(n, 1 + rng.random_range(0..n), seed.wrapping_add(trial));
        let alphas = random_coefficients(20, n, &mut rng);
        for alpha in alphas.rows() {
            let i = rng.random_range(0..n);
            max_gap = max_gap.max(equivalence_gap(&k, alpha, i).unwrap_or(f64::INFINITY));
            triples += 1;
        }
        let d = kernel_to_dissimilarity(&k)?;
        for mode in [TrainMode::Batch, TrainMode::Online] {
            let a = train_kernel(&k, &lattice, &schedules, seed ^ trial, mode, InitMode::Indicators)?;
            let b = train_relational(&d, &lattice, &schedules, seed ^ trial, mode, InitMode::Indicators)?;
            same_assign &= a.history == b.history && a.assignment == b.assignment;
            let diff = (&a.prototypes.alphas() - &b.prototypes.alphas())
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            max_coeff_diff = max_coeff_diff.max(diff);
        }
    }
    Ok(vec![
        check(
            "distance identity",
            max_gap < 1e-9,
            format!("{triples} triples, max gap {max_gap:.3e}"),
        ),
        check(
            "identical assignments",
            same_assign,
            "kernel vs relational, batch and online".into(),
        ),
        check(
            "coefficients agree",
            max_coeff_diff <= 1e-12,
            format!("max coefficient difference {max_coeff_diff:.3e}"),
        ),
    ])
}

fn kh(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let configs = 200;
    for _ in 0..configs {
        let n = rng.random_range(1..=200);
        let p = rng.random_range(1..=10);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let points = VectorDataset::new(Array2::from_shape_fn((n, p), |_| scale * (rng.random::<f64>() - 0.5)))?;
        let weights = Array1::from_shape_fn(n, |_| 0.01 + rng.random::<f64>());
        failures += !verify_koenig_huygens(&points, weights.view(), 1e-9)? as usize;
    }
    Ok(vec![check(
        "weighted variance identity",
        failures == 0,
        format!("{failures} of {configs} configurations off by more than 1e-9 relative"),
    )])
}

fn triangle(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let trials = 500;
    for t in 0..trials {
        let d = random_tree_metric(30, seed.wrapping_add(t / 50));
        let weights = Array1::from_shape_fn(30, |_| rng.random::<f64>());
        failures += !verify_triangle_bound(&d, weights.view(), 1e-9)? as usize;
    }
    let witness = non_metric_witness();
    let (lhs, rhs) = triangle_bound_sides(&witness, Array1::ones(3).view())?;
    Ok(vec![
        check(
            "bound on tree metrics",
            failures == 0,
            format!("{failures} of {trials} weight vectors violate the bound"),
        ),
        check(
            "non-metric witness violates the bound (expected)",
            lhs > rhs,
            format!("pairwise side {lhs} vs medoid side {rhs}"),
        ),
    ])
}

/// Unit weights give a pairwise side of 34 against a medoid side of 2.
pub fn non_metric_witness() -> DissimilarityMatrix {
    DissimilarityMatrix::new(ndarray::array![[0.0, 1.0, 1.0], [1.0, 0.0, 100.0], [1.0, 100.0, 0.0]])
        .expect("valid witness")
}

fn stmp_limit(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = gaussian_blobs(60, &[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]], 1.0, seed);
    let d = squared_euclidean(&data);
    let k = 4;
    let h = Array2::<f64>::eye(k);

    // Zero temperature: the soft argmax equals the relational assignment to
    // the same mixing coefficients.
    let gamma = {
        let mut g = Array2::from_shape_fn((60, k), |_| rng.random::<f64>());
        for mut row in g.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        g
    };
    let b = mixing_coefficients(gamma.view(), &h)?;
    let e = mean_field(&d, b.view(), &h);
    let soft = soft_update(e.view(), 1e6);
    let crisp: Vec<usize> = soft
        .rows()
        .into_iter()
        .map(|r| crate::common::argmin(r.iter().map(|g| -g)))
        .collect();
    let relational = assign_from_distances(&relational_distances(&d, b.t()));
    let agree = crisp.iter().zip(&relational.bmu).filter(|(a, b)| a == b).count();

    let mut max_gap = 0.0f64;
    for i in 0..60 {
        for s in 0..k {
            max_gap = max_gap.max((e[[i, s]] - relational_distance(&d, b.column(s), i)?).abs());
        }
    }

    // Far below the critical temperature the uniform solution is stable.
    let lattice = Lattice::grid(2, 1, Topology::Rectangular)?;
    let beta = 0.1 * critical_beta(&d)?;
    let mut solver = StmpSolver::new(&d, lattice.neighborhood_at(1.0), seed)?;
    solver.relax(beta, 1e-10, 1000)?;
    let deviation = solver.state().gamma.iter().fold(0.0f64, |m, g| m.max((g - 0.5).abs()));

    Ok(vec![
        check(
            "zero-temperature agreement",
            agree * 100 >= 99 * 60,
            format!("{agree} of 60 points agree"),
        ),
        check(
            "mean field equals relational distance",
            max_gap < 1e-10,
            format!("max gap {max_gap:.3e}"),
        ),
        check(
            "no symmetry breaking below critical beta",
            deviation < 1e-3,
            format!("max deviation from uniform {deviation:.3e}"),
        ),
    ])
}

fn frobenius(a: &Array2<f64>, b: ndarray::ArrayView2<'_, f64>) -> f64 {
    (a - &b).iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn nystrom(seed: u64) -> Result<Vec<CheckResult>> {
    let k = random_psd_kernel(60, 60, seed);
    let full = nystrom_fit(&k, 60, seed)?;
    let full_err = (&full.reconstruct_gram() - &k.values())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let v = Array1::from_shape_fn(40, |i| 1.0 + i as f64 / 10.0);
    let rank1 = KernelMatrix::new(Array2::from_shape_fn((40, 40), |(i, j)| v[i] * v[j]))?;
    let r1 = nystrom_fit(&rank1, 1, seed)?;
    let r1_err = (&r1.reconstruct_gram() - &rank1.values())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let ms = [5, 10, 20, 40];
    let mut means = [0.0; 4];
    for s in 0..20 {
        let kern = random_psd_kernel(100, 100, seed.wrapping_add(1000 + s));
        for (slot, &m) in ms.iter().enumerate() {
            means[slot] += frobenius(
                &nystrom_fit(&kern, m, seed.wrapping_add(s))?.reconstruct_gram(),
                kern.values(),
            ) / 20.0;
        }
    }
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);

    let data = gaussian_blobs(50, &[[0.0, 0.0], [3.0, 1.0]], 1.0, seed);
    let d = squared_euclidean(&data);
    let factor = nystrom_fit_dissimilarity(&d, 8, seed)?;
    let approx_d = DissimilarityMatrix::new(factor.reconstruct_dissimilarity().mapv(|x| x.max(0.0)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphas = random_coefficients(20, 50, &mut rng);
    let mut max_gap = 0.0f64;
    for alpha in alphas.rows() {
        for i in 0..50 {
            let a = approx_relational_distance(&factor, alpha, i)?;
            max_gap = max_gap.max((a - relational_distance(&approx_d, alpha, i)?).abs());
        }
    }
    Ok(vec![
        check(
            "full-rank exactness",
            full_err < 1e-8,
            format!("max abs error {full_err:.3e}"),
        ),
        check(
            "rank-one exactness",
            r1_err < 1e-8,
            format!("max abs error {r1_err:.3e}"),
        ),
        check(
            "error non-increasing in landmarks",
            monotone,
            format!("mean Frobenius error at m = {ms:?}: {means:.4?}"),
        ),
        check(
            "factored distance matches dense",
            max_gap < 1e-9,
            format!("max gap {max_gap:.3e}"),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for suite in SUITES {
            let report = run_suite(suite, 7).unwrap();
            assert!(report.passed(), "{report:#?}");
        }
    }

    #[test]
    fn unknown_suite_errors() {
        assert!(run_suite("nope", 0).is_err());
    }
}
