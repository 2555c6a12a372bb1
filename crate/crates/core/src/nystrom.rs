//! Nyström low-rank factors for accelerating coefficient-prototype SOMs.
//!
//! A factor keeps the N×m columns `C` of a Gram-like matrix at `m` landmarks
//! and the pseudo-inverse `W⁺` of the landmark block, so that `G̃ = C W⁺ Cᵀ`.
//! Dissimilarities are first double-centered into `S = -½ J D J`; the
//! approximate dissimilarity is then `D̃_ij = S̃_ii + S̃_jj - 2 S̃_ij`. Distances
//! to a coefficient prototype cost O(Nm) instead of O(N²).

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dismat::{DissimilarityMatrix, KernelMatrix};
use crate::error::{Error, Result};
use crate::relsom::{CoefficientGeometry, COEFF_SUM_TOL};

/// Eigenvalues of the landmark block below `rank_tol · λ_max` are dropped.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorSource {
    Kernel,
    Dissimilarity,
}

#[derive(Debug, Clone)]
pub struct NystromFactor {
    landmarks: Vec<usize>,
    c_block: Array2<f64>,
    w_pinv: Array2<f64>,
    rank_tol: f64,
    /// `G̃_ii` for every point.
    diag: Array1<f64>,
    source: FactorSource,
    kept_rank: usize,
}

fn pseudo_inverse(w: &Array2<f64>, rank_tol: f64) -> (Array2<f64>, usize) {
    let m = w.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(m, m, |i, j| 0.5 * (w[[i, j]] + w[[j, i]])));
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = rank_tol * lambda_max;
    let mut pinv = Array2::<f64>::zeros((m, m));
    let mut kept = 0;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff || lambda <= 0.0 {
            continue;
        }
        kept += 1;
        let v = eig.eigenvectors.column(idx);
        for i in 0..m {
            for j in 0..m {
                pinv[[i, j]] += v[i] * v[j] / lambda;
            }
        }
    }
    (pinv, kept)
}

fn sample_landmarks(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::LandmarkCount { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, m).into_vec())
}

impl NystromFactor {
    fn from_columns(landmarks: Vec<usize>, c_block: Array2<f64>, rank_tol: f64, source: FactorSource) -> Self {
        let m = landmarks.len();
        let w = Array2::from_shape_fn((m, m), |(a, b)| c_block[[landmarks[a], b]]);
        let (w_pinv, kept_rank) = pseudo_inverse(&w, rank_tol);
        let cw = c_block.dot(&w_pinv);
        let diag = Array1::from_iter(cw.rows().into_iter().zip(c_block.rows()).map(|(a, c)| a.dot(&c)));
        Self {
            landmarks,
            c_block,
            w_pinv,
            rank_tol,
            diag,
            source,
            kept_rank,
        }
    }

    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }

    pub fn c_block(&self) -> ArrayView2<'_, f64> {
        self.c_block.view()
    }

    pub fn w_pinv(&self) -> ArrayView2<'_, f64> {
        self.w_pinv.view()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn source(&self) -> FactorSource {
        self.source
    }

    /// Number of landmark-block eigenvalues kept in the pseudo-inverse.
    pub fn kept_rank(&self) -> usize {
        self.kept_rank
    }

    pub fn n(&self) -> usize {
        self.c_block.nrows()
    }

    /// `G̃_ij`.
    pub fn approx_gram(&self, i: usize, j: usize) -> f64 {
        self.c_block.row(i).dot(&self.w_pinv.dot(&self.c_block.row(j)))
    }

    /// `D̃_ij = G̃_ii + G̃_jj - 2 G̃_ij`.
    pub fn approx_dissimilarity(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.diag[i] + self.diag[j] - 2.0 * self.approx_gram(i, j)
    }

    /// Dense `C W⁺ Cᵀ`.
    pub fn reconstruct_gram(&self) -> Array2<f64> {
        self.c_block.dot(&self.w_pinv).dot(&self.c_block.t())
    }

    /// Dense D̃. Entries may be slightly negative and are not clamped.
    pub fn reconstruct_dissimilarity(&self) -> Array2<f64> {
        let g = self.reconstruct_gram();
        let n = self.n();
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                self.diag[i] + self.diag[j] - 2.0 * g[[i, j]]
            }
        })
    }

    /// Mean and max absolute error of D̃ against `d` over `samples` seeded
    /// random pairs.
    pub fn sampled_error(&self, d: &DissimilarityMatrix, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n();
        let (mut sum, mut max) = (0.0, 0.0f64);
        for _ in 0..samples {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            let err = (self.approx_dissimilarity(i, j) - d.get(i, j)).abs();
            sum += err;
            max = max.max(err);
        }
        (sum / samples.max(1) as f64, max)
    }
}

/// Nyström factor of a kernel from `m` uniformly sampled landmarks.
pub fn nystrom_fit(k: &KernelMatrix, m: usize, seed: u64) -> Result<NystromFactor> {
    nystrom_fit_with_tol(k, m, seed, DEFAULT_RANK_TOL)
}

pub fn nystrom_fit_with_tol(k: &KernelMatrix, m: usize, seed: u64, rank_tol: f64) -> Result<NystromFactor> {
    let landmarks = sample_landmarks(k.n(), m, seed)?;
    let kv = k.values();
    let c = Array2::from_shape_fn((k.n(), m), |(i, a)| kv[[i, landmarks[a]]]);
    Ok(NystromFactor::from_columns(
        landmarks,
        c,
        rank_tol,
        FactorSource::Kernel,
    ))
}

/// Nyström factor of the double-centered dissimilarity `S = -½ J D J`.
/// Only the landmark columns of `S` are formed.
pub fn nystrom_fit_dissimilarity(d: &DissimilarityMatrix, m: usize, seed: u64) -> Result<NystromFactor> {
    nystrom_fit_dissimilarity_with_tol(d, m, seed, DEFAULT_RANK_TOL)
}

pub fn nystrom_fit_dissimilarity_with_tol(
    d: &DissimilarityMatrix,
    m: usize,
    seed: u64,
    rank_tol: f64,
) -> Result<NystromFactor> {
    let n = d.n();
    let landmarks = sample_landmarks(n, m, seed)?;
    let dv = d.values();
    let row_means: Vec<f64> = dv.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let c = Array2::from_shape_fn((n, m), |(i, a)| {
        let j = landmarks[a];
        -0.5 * (dv[[i, j]] - row_means[i] - row_means[j] + grand)
    });
    Ok(NystromFactor::from_columns(
        landmarks,
        c,
        rank_tol,
        FactorSource::Dissimilarity,
    ))
}

/// `(D̃α)_i - ½ αᵀD̃α` evaluated through the factor in O(Nm).
pub fn approx_relational_distance(factor: &NystromFactor, alpha: ArrayView1<'_, f64>, i: usize) -> Result<f64> {
    let sum = alpha.sum();
    if (sum - 1.0).abs() > COEFF_SUM_TOL {
        return Err(Error::CoefficientSum { sum });
    }
    let u = factor.c_block.t().dot(&alpha);
    let z = factor.w_pinv.dot(&u);
    Ok(factor.diag[i] - 2.0 * factor.c_block.row(i).dot(&z) + u.dot(&z))
}

/// Coefficient geometry backed by a Nyström factor.
#[derive(Debug, Clone, Copy)]
pub struct NystromGeometry<'a> {
    pub factor: &'a NystromFactor,
}

impl CoefficientGeometry for NystromGeometry<'_> {
    fn n(&self) -> usize {
        self.factor.n()
    }

    fn self_terms(&self, alphas: ArrayView2<'_, f64>) -> Vec<f64> {
        let u = alphas.dot(&self.factor.c_block);
        let z = u.dot(&self.factor.w_pinv);
        u.rows().into_iter().zip(z.rows()).map(|(a, b)| a.dot(&b)).collect()
    }

    fn distances(&self, alphas: ArrayView2<'_, f64>) -> Array2<f64> {
        let u = alphas.dot(&self.factor.c_block);
        let z = u.dot(&self.factor.w_pinv);
        let forms: Vec<f64> = u.rows().into_iter().zip(z.rows()).map(|(a, b)| a.dot(&b)).collect();
        let cz = self.factor.c_block.dot(&z.t());
        Array2::from_shape_fn(cz.dim(), |(i, k)| self.factor.diag[i] - 2.0 * cz[[i, k]] + forms[k])
    }

    fn point_distance(&self, alpha: ArrayView1<'_, f64>, self_term: f64, i: usize) -> f64 {
        let z = self.factor.w_pinv.dot(&self.factor.c_block.t().dot(&alpha));
        self.factor.diag[i] - 2.0 * self.factor.c_block.row(i).dot(&z) + self_term
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dismat::{squared_euclidean, VectorDataset};
    use crate::relsom::relational_distance;
    use ndarray::array;

    fn max_abs(a: &Array2<f64>, b: ArrayView2<'_, f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn full_rank_kernel_is_exact() {
        let k = crate::synth::random_psd_kernel(30, 8, 2);
        let f = nystrom_fit(&k, 30, 1).unwrap();
        assert!(max_abs(&f.reconstruct_gram(), k.values()) < 1e-8);
    }

    #[test]
    fn rank_one_from_one_landmark() {
        let v = array![1.0, -2.0, 0.5, 3.0, 1.5];
        let k = KernelMatrix::new(Array2::from_shape_fn((5, 5), |(i, j)| v[i] * v[j])).unwrap();
        for seed in 0..5 {
            let f = nystrom_fit(&k, 1, seed).unwrap();
            assert!(max_abs(&f.reconstruct_gram(), k.values()) < 1e-8);
        }
    }

    #[test]
    fn landmark_count_checked() {
        let k = crate::synth::random_psd_kernel(4, 2, 0);
        assert!(matches!(nystrom_fit(&k, 5, 0), Err(Error::LandmarkCount { .. })));
        assert!(matches!(nystrom_fit(&k, 0, 0), Err(Error::LandmarkCount { .. })));
    }

    #[test]
    fn dissimilarity_full_rank_is_exact() {
        let data = VectorDataset::new(array![[0.0], [1.0], [3.0]]).unwrap();
        let d = squared_euclidean(&data);
        let f = nystrom_fit_dissimilarity(&d, 3, 0).unwrap();
        assert!(max_abs(&f.reconstruct_dissimilarity(), d.values()) < 1e-8);

        let data = crate::synth::uniform_points(40, 3, 5);
        let d = squared_euclidean(&data);
        let f = nystrom_fit_dissimilarity(&d, 40, 3).unwrap();
        assert!(max_abs(&f.reconstruct_dissimilarity(), d.values()) < 1e-6);
        let rec = f.reconstruct_dissimilarity();
        assert!(rec.diag().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn non_euclidean_input_drops_negative_spectrum() {
        let d = crate::synth::random_dissimilarity(20, 4);
        let f = nystrom_fit_dissimilarity(&d, 20, 0).unwrap();
        assert!(f.kept_rank() < 20);
        let (mean, max) = f.sampled_error(&d, 1000, 1);
        assert!(mean.is_finite() && max >= mean);
    }

    #[test]
    fn approx_distance_matches_exact_on_reconstruction() {
        let data = crate::synth::uniform_points(25, 5, 8);
        let d = squared_euclidean(&data);
        let f = nystrom_fit_dissimilarity(&d, 3, 2).unwrap();
        let d_tilde = DissimilarityMatrix::new(f.reconstruct_dissimilarity().mapv(|v| v.max(0.0))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let alphas = crate::synth::random_coefficients(4, 25, &mut rng);
        let geom = NystromGeometry { factor: &f };
        let all = geom.distances(alphas.view());
        let terms = geom.self_terms(alphas.view());
        for k in 0..4 {
            for i in 0..25 {
                let approx = approx_relational_distance(&f, alphas.row(k), i).unwrap();
                let exact = relational_distance(&d_tilde, alphas.row(k), i).unwrap();
                assert!((approx - exact).abs() < 1e-9, "{approx} vs {exact}");
                assert!((all[[i, k]] - approx).abs() < 1e-9);
                assert!((geom.point_distance(alphas.row(k), terms[k], i) - approx).abs() < 1e-9);
            }
        }
        let mut indicator = Array1::zeros(25);
        indicator[3] = 1.0;
        assert!(
            (approx_relational_distance(&f, indicator.view(), 7).unwrap() - f.approx_dissimilarity(7, 3)).abs() < 1e-9
        );
    }
}
