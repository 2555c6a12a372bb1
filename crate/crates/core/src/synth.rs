//! Seeded synthetic fixtures shared by the verification suites, the
//! benchmark harness and the tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dismat::{DissimilarityMatrix, KernelMatrix, VectorDataset};

/// `n` points split round-robin across isotropic Gaussian blobs in the plane.
pub fn gaussian_blobs(n: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).expect("spread must be finite and nonnegative");
    let points = Array2::from_shape_fn((n, 2), |(i, d)| centers[i % centers.len()][d] + noise.sample(&mut rng));
    VectorDataset::new(points).expect("finite points")
}

/// `n` points uniform in `[0, 1)^p`.
pub fn uniform_points(n: usize, p: usize, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VectorDataset::new(Array2::from_shape_fn((n, p), |_| rng.random::<f64>())).expect("finite points")
}

/// Gram matrix `X Xᵀ` of `n` standard Gaussian points in R^rank.
pub fn random_psd_kernel(n: usize, rank: usize, seed: u64) -> KernelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, rank), |_| StandardNormal.sample(&mut rng));
    KernelMatrix::new(x.dot(&x.t())).expect("gram matrix is symmetric")
}

/// Gaussian RBF kernel `exp(-|x_i - x_j|² / 2w²)`.
pub fn rbf_kernel(data: &VectorDataset, width: f64) -> KernelMatrix {
    let n = data.n();
    let x = data.points();
    let denom = 2.0 * width * width;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let d: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-d / denom).exp()
    });
    KernelMatrix::new(values).expect("rbf kernel is symmetric")
}

/// Path-length metric of a random weighted tree: node `i > 0` hangs from a
/// uniformly chosen earlier node with an edge length in `[0.1, 1.1)`.
pub fn random_tree_metric(n: usize, seed: u64) -> DissimilarityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let w = 0.1 + rng.random::<f64>();
        for j in 0..i {
            let v = d[[parent, j]] + w;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    DissimilarityMatrix::new(d).expect("tree metric is valid")
}

/// Symmetric matrix with zero diagonal and off-diagonal entries uniform in
/// `[0, 1)`. Generally not metric.
pub fn random_dissimilarity(n: usize, seed: u64) -> DissimilarityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.random();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    DissimilarityMatrix::new(d).expect("valid dissimilarity")
}

/// Random row-stochastic coefficient rows (K×N), entries drawn uniformly then
/// normalized.
pub fn random_coefficients(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((k, n), |_| rng.random::<f64>());
    for mut row in a.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    a
}
