//! Per-iteration timing of each trainer's two phases across data sizes, with
//! log-log slope fits.
//!
//! Every size uses the same kind of fixture: seeded 2-D Gaussian blobs and
//! their squared-Euclidean dissimilarity (plus the centered linear kernel for
//! the kernel trainers). Online trainers are timed over a number of
//! presentations and scaled to a full epoch of N presentations.

use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use crate::common::sample_indices;
use crate::dismat::{squared_euclidean, DissimilarityMatrix, KernelMatrix, VectorDataset};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Topology};
use crate::mediansom::{self, MedianPrototypes};
use crate::nystrom::{nystrom_fit_dissimilarity, NystromGeometry};
use crate::relsom::{
    assign_from_distances, batch_update, CoefficientGeometry, CoefficientPrototypes, KernelGeometry, OnlineState,
    RelationalGeometry,
};
use crate::stmp::{mean_field, mixing_coefficients, soft_update};
use crate::synth::gaussian_blobs;
use crate::vectorsom::{self, VectorPrototypes};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trainers the harness knows how to time.
pub const BENCH_ALGORITHMS: &[&str] = &[
    "classic-batch",
    "classic-online",
    "median",
    "relational-batch",
    "relational-online",
    "kernel-batch",
    "kernel-online",
    "stmp",
    "relational-nystrom",
];

const BLOB_CENTERS: [[f64; 2]; 4] = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0]];
/// Neighborhood radius used for timing.
const BENCH_SIGMA: f64 = 1.0;
/// Inverse temperature used for the STMP inner step.
const BENCH_BETA: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub algorithms: Vec<String>,
    pub repeats: usize,
    pub seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Presentations timed per repeat for coefficient online trainers.
    pub online_presentations: usize,
    pub nystrom_landmarks: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 4000],
            algorithms: vec!["relational-batch".into(), "relational-online".into(), "median".into()],
            repeats: 5,
            seed: 0,
            grid_rows: 5,
            grid_cols: 5,
            online_presentations: 8,
            nystrom_landmarks: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub n: usize,
    /// Median over repeats of the per-iteration (or per-epoch) phase time.
    pub assignment_ns: f64,
    pub update_ns: f64,
    pub total_ns: f64,
    /// True when the epoch time is scaled up from fewer presentations.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeRow {
    pub algorithm: String,
    pub assignment_slope: Option<f64>,
    pub update_slope: Option<f64>,
    pub total_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub slopes: Vec<SlopeRow>,
    /// Slope of log(online epoch / batch iteration) for the relational
    /// trainers, when both were timed.
    pub online_batch_ratio_slope: Option<f64>,
    /// Set when a size could not be allocated; rows cover smaller sizes only.
    pub partial: bool,
    pub partial_reason: Option<String>,
}

impl BenchTable {
    pub fn row(&self, algorithm: &str, n: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.n == n)
    }

    pub fn slope(&self, algorithm: &str) -> Option<&SlopeRow> {
        self.slopes.iter().find(|s| s.algorithm == algorithm)
    }
}

/// Least-squares slope of `log y` against `log x`; `None` for fewer than two
/// usable points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

fn elapsed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_nanos() as f64)
}

struct Fixture {
    data: VectorDataset,
    d: DissimilarityMatrix,
    kernel: Option<KernelMatrix>,
}

fn try_alloc_square(n: usize) -> std::result::Result<(), String> {
    let mut probe: Vec<f64> = Vec::new();
    probe
        .try_reserve_exact(n * n)
        .map_err(|e| format!("cannot allocate a {n}×{n} matrix: {e}"))
}

fn fixture(n: usize, seed: u64, need_kernel: bool) -> std::result::Result<Fixture, String> {
    try_alloc_square(n)?;
    let data = gaussian_blobs(n, &BLOB_CENTERS, 1.0, seed ^ n as u64);
    let d = squared_euclidean(&data);
    let kernel = if need_kernel {
        try_alloc_square(n)?;
        let x = data.points();
        let mean = x.mean_axis(ndarray::Axis(0)).expect("nonempty data");
        let centered = &x - &mean;
        Some(KernelMatrix::new(centered.dot(&centered.t())).map_err(|e| e.to_string())?)
    } else {
        None
    };
    Ok(Fixture { data, d, kernel })
}

/// Time of one assignment phase and one update phase.
type Phases = (f64, f64);

fn time_classic_batch(f: &Fixture, h: &Array2<f64>, init: &[usize]) -> Result<Phases> {
    let protos = VectorPrototypes::from_points(&f.data, init);
    let (assignment, a) = elapsed(|| vectorsom::assign_all(&f.data, &protos));
    let assignment = assignment?;
    let (_, u) = elapsed(|| vectorsom::batch_update(&f.data, &assignment, h, &protos));
    Ok((a, u))
}

fn time_classic_online(f: &Fixture, h: &Array2<f64>, init: &[usize], rng: &mut ChaCha8Rng) -> Result<Phases> {
    let mut protos = VectorPrototypes::from_points(&f.data, init);
    let n = f.data.n();
    let (mut a, mut u) = (0.0, 0.0);
    for _ in 0..n {
        let i = rng.random_range(0..n);
        let (bmu, ta) = elapsed(|| vectorsom::bmu_vector(f.data.point(i), &protos));
        let bmu = bmu?;
        let (_, tu) = elapsed(|| vectorsom::online_update(&mut protos, f.data.point(i), h, bmu, 0.1));
        a += ta;
        u += tu;
    }
    Ok((a, u))
}

fn time_median(f: &Fixture, h: &Array2<f64>, init: &[usize]) -> Result<Phases> {
    let protos = MedianPrototypes::new(init.to_vec(), f.d.n())?;
    let (assignment, a) = elapsed(|| mediansom::assign_all(&protos, &f.d));
    let (_, u) = elapsed(|| mediansom::median_update(&f.d, &assignment, h));
    Ok((a, u))
}

fn time_coeff_batch<G: CoefficientGeometry + ?Sized>(geom: &G, h: &Array2<f64>, init: &[usize]) -> Phases {
    let protos = CoefficientPrototypes::indicators(init, geom.n());
    let (assignment, a) = elapsed(|| assign_from_distances(&geom.distances(protos.alphas())));
    let (_, u) = elapsed(|| batch_update(&assignment, h, &protos));
    (a, u)
}

/// Returns the phase times summed over `presentations` steps.
fn time_coeff_online<G: CoefficientGeometry + ?Sized>(
    geom: &G,
    h: &Array2<f64>,
    init: &[usize],
    presentations: usize,
    rng: &mut ChaCha8Rng,
) -> Phases {
    let n = geom.n();
    let mut state = OnlineState::new(geom, CoefficientPrototypes::indicators(init, n));
    let (mut a, mut u) = (0.0, 0.0);
    for _ in 0..presentations {
        let i = rng.random_range(0..n);
        let (bmu, ta) = elapsed(|| state.bmu(i));
        let (_, tu) = elapsed(|| state.update(i, bmu, h, 0.1));
        a += ta;
        u += tu;
    }
    (a, u)
}

fn time_stmp(f: &Fixture, h: &Array2<f64>, init: &[usize]) -> Result<Phases> {
    let e = Array2::from_shape_fn((f.d.n(), h.nrows()), |(i, s)| f.d.get(i, init[s]));
    let (b, u) = elapsed(|| mixing_coefficients(soft_update(e.view(), BENCH_BETA).view(), h));
    let b = b?;
    let (_, a) = elapsed(|| mean_field(&f.d, b.view(), h));
    Ok((a, u))
}

/// Runs the harness. Sizes must be ascending.
pub fn run_bench(config: &BenchConfig) -> Result<BenchTable> {
    if config.sizes.is_empty() || config.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "bench sizes must be nonempty and strictly ascending".into(),
        ));
    }
    if config.repeats == 0 || config.online_presentations == 0 {
        return Err(Error::InvalidParameter(
            "repeats and online presentations must be positive".into(),
        ));
    }
    for name in &config.algorithms {
        if !BENCH_ALGORITHMS.contains(&name.as_str()) {
            return Err(Error::InvalidParameter(format!(
                "unknown bench algorithm {name:?}; known: {}",
                BENCH_ALGORITHMS.join(", ")
            )));
        }
    }
    let lattice = Lattice::grid(config.grid_rows, config.grid_cols, Topology::Rectangular)?;
    let h = lattice.neighborhood_at(BENCH_SIGMA);
    let k = lattice.k_units();
    let need_kernel = config.algorithms.iter().any(|a| a.starts_with("kernel"));

    let mut rows = Vec::new();
    let mut partial_reason = None;
    for &n in &config.sizes {
        if n < k {
            return Err(Error::InvalidParameter(format!(
                "bench size {n} is below the {k} lattice units"
            )));
        }
        let f = match fixture(n, config.seed, need_kernel) {
            Ok(f) => f,
            Err(reason) => {
                partial_reason = Some(reason);
                break;
            }
        };
        let nystrom = if config.algorithms.iter().any(|a| a == "relational-nystrom") {
            Some(nystrom_fit_dissimilarity(
                &f.d,
                config.nystrom_landmarks.min(n),
                config.seed,
            )?)
        } else {
            None
        };
        for name in &config.algorithms {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (n as u64).rotate_left(17));
            let presentations = config.online_presentations.min(n);
            let mut assign = Vec::with_capacity(config.repeats);
            let mut update = Vec::with_capacity(config.repeats);
            let mut extrapolated = false;
            // One untimed warm-up pass, then the timed repeats.
            for rep in 0..=config.repeats {
                let init = sample_indices(n, k, &mut rng);
                let (a, u) = match name.as_str() {
                    "classic-batch" => time_classic_batch(&f, &h, &init)?,
                    "classic-online" => time_classic_online(&f, &h, &init, &mut rng)?,
                    "median" => time_median(&f, &h, &init)?,
                    "relational-batch" => time_coeff_batch(&RelationalGeometry { d: &f.d }, &h, &init),
                    "kernel-batch" => time_coeff_batch(
                        &KernelGeometry {
                            k: f.kernel.as_ref().unwrap(),
                        },
                        &h,
                        &init,
                    ),
                    "relational-nystrom" => time_coeff_batch(
                        &NystromGeometry {
                            factor: nystrom.as_ref().unwrap(),
                        },
                        &h,
                        &init,
                    ),
                    "relational-online" | "kernel-online" => {
                        extrapolated = presentations < n;
                        let scale = n as f64 / presentations as f64;
                        let (a, u) = if name == "relational-online" {
                            time_coeff_online(&RelationalGeometry { d: &f.d }, &h, &init, presentations, &mut rng)
                        } else {
                            time_coeff_online(
                                &KernelGeometry {
                                    k: f.kernel.as_ref().unwrap(),
                                },
                                &h,
                                &init,
                                presentations,
                                &mut rng,
                            )
                        };
                        (a * scale, u * scale)
                    }
                    "stmp" => time_stmp(&f, &h, &init)?,
                    _ => unreachable!("validated above"),
                };
                if rep > 0 {
                    assign.push(a);
                    update.push(u);
                }
            }
            let totals: Vec<f64> = assign.iter().zip(&update).map(|(a, u)| a + u).collect();
            rows.push(BenchRow {
                algorithm: name.clone(),
                n,
                assignment_ns: median(&mut assign),
                update_ns: median(&mut update),
                total_ns: median(&mut totals.clone()),
                extrapolated,
            });
        }
    }

    let slopes = config
        .algorithms
        .iter()
        .map(|name| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| &r.algorithm == name).collect();
            let ns: Vec<f64> = mine.iter().map(|r| r.n as f64).collect();
            let fit = |get: fn(&BenchRow) -> f64| loglog_slope(&ns, &mine.iter().map(|r| get(r)).collect::<Vec<_>>());
            SlopeRow {
                algorithm: name.clone(),
                assignment_slope: fit(|r| r.assignment_ns),
                update_slope: fit(|r| r.update_ns),
                total_slope: fit(|r| r.total_ns),
            }
        })
        .collect();

    let ratios: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.algorithm == "relational-online")
        .filter_map(|online| {
            rows.iter()
                .find(|b| b.algorithm == "relational-batch" && b.n == online.n)
                .map(|batch| (online.n as f64, online.total_ns / batch.total_ns))
        })
        .collect();
    let online_batch_ratio_slope = loglog_slope(
        &ratios.iter().map(|r| r.0).collect::<Vec<_>>(),
        &ratios.iter().map(|r| r.1).collect::<Vec<_>>(),
    );

    Ok(BenchTable {
        config: config.clone(),
        rows,
        slopes,
        online_batch_ratio_slope,
        partial: partial_reason.is_some(),
        partial_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert_relative_eq!(loglog_slope(&xs, &ys).unwrap(), 2.0, epsilon = 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn median_of_repeats() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_bench_covers_every_algorithm() {
        let config = BenchConfig {
            sizes: vec![40, 80],
            algorithms: BENCH_ALGORITHMS.iter().map(|s| s.to_string()).collect(),
            repeats: 1,
            nystrom_landmarks: 10,
            grid_rows: 2,
            grid_cols: 2,
            ..BenchConfig::default()
        };
        let table = run_bench(&config).unwrap();
        assert_eq!(table.rows.len(), 2 * BENCH_ALGORITHMS.len());
        assert!(!table.partial);
        assert!(table.online_batch_ratio_slope.is_some());
        assert!(table.row("relational-online", 80).unwrap().extrapolated);
    }

    #[test]
    fn rejects_bad_sizes_and_names() {
        let mut config = BenchConfig {
            sizes: vec![100, 50],
            ..BenchConfig::default()
        };
        assert!(run_bench(&config).is_err());
        config.sizes = vec![50];
        config.algorithms = vec!["nope".into()];
        assert!(run_bench(&config).is_err());
    }
}
