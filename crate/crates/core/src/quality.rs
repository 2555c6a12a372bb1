//! Quantization and clustering criteria, the König-Huygens and triangle-bound
//! oracles, and U-matrix export.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::common::Assignment;
use crate::dismat::{save_csv, DissimilarityMatrix, VectorDataset};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::mediansom::MedianPrototypes;
use crate::relsom::{prototype_pairwise_dissimilarity, relational_distances, CoefficientPrototypes};
use crate::vectorsom::{VectorPrototypes, EMPTY_WEIGHT};

/// Prototypes whose distances to data points can be read off `D`.
#[derive(Debug, Clone, Copy)]
pub enum PrototypeRef<'a> {
    Median(&'a MedianPrototypes),
    Coefficients(&'a CoefficientPrototypes),
}

impl PrototypeRef<'_> {
    pub fn k_units(&self) -> usize {
        match self {
            PrototypeRef::Median(p) => p.k_units(),
            PrototypeRef::Coefficients(p) => p.k_units(),
        }
    }

    /// N×K matrix of `d(x_i, m_k)`.
    fn distances(&self, d: &DissimilarityMatrix) -> Array2<f64> {
        match self {
            PrototypeRef::Median(p) => Array2::from_shape_fn((d.n(), p.k_units()), |(i, k)| d.get(i, p.indices[k])),
            PrototypeRef::Coefficients(p) => relational_distances(d, p.alphas()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub quantization_cost: Option<f64>,
    pub clustering_cost: f64,
    /// `Σ_i h_{k c_i}` per unit.
    pub per_unit_sizes: Vec<f64>,
    /// Units left out of the clustering cost because their weight underflows.
    pub skipped_units: Vec<usize>,
}

/// `Σ_k Σ_i h_{k c_i} d(x_i, m_k)`.
pub fn quantization_cost(
    d: &DissimilarityMatrix,
    protos: PrototypeRef<'_>,
    assignment: &Assignment,
    h: &Array2<f64>,
) -> Result<f64> {
    check_sizes(d, assignment, h)?;
    if protos.k_units() != h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: protos.k_units(),
        });
    }
    let dist = protos.distances(d);
    Ok(assignment
        .bmu
        .iter()
        .enumerate()
        .map(|(i, &c)| (0..h.nrows()).map(|k| h[[k, c]] * dist[[i, k]]).sum::<f64>())
        .sum())
}

fn check_sizes(d: &DissimilarityMatrix, assignment: &Assignment, h: &Array2<f64>) -> Result<()> {
    if assignment.len() != d.n() {
        return Err(Error::DimensionMismatch {
            expected: d.n(),
            found: assignment.len(),
        });
    }
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidParameter("neighborhood must be square".into()));
    }
    if let Some(&c) = assignment.bmu.iter().find(|&&c| c >= h.nrows()) {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: c + 1,
        });
    }
    Ok(())
}

/// Weights `β_ki = h_{k c_i}`, K×N.
fn unit_weights(assignment: &Assignment, h: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((h.nrows(), assignment.len()), |(k, i)| h[[k, assignment.bmu[i]]])
}

/// `½ Σ_k (Σ_i β_ki)⁻¹ Σ_{i,j} β_ki β_kj D_ij`, skipping units whose weight
/// sum is below `EMPTY_WEIGHT`. Returns the cost, the per-unit sizes and the
/// skipped units.
pub fn clustering_cost(
    d: &DissimilarityMatrix,
    assignment: &Assignment,
    h: &Array2<f64>,
) -> Result<(f64, Vec<f64>, Vec<usize>)> {
    check_sizes(d, assignment, h)?;
    let beta = unit_weights(assignment, h);
    let sizes: Vec<f64> = beta.rows().into_iter().map(|r| r.sum()).collect();
    let db = d.values().dot(&beta.t());
    let mut skipped = Vec::new();
    let mut total = 0.0;
    for (k, &size) in sizes.iter().enumerate() {
        if size < EMPTY_WEIGHT {
            skipped.push(k);
            continue;
        }
        total += 0.5 * beta.row(k).dot(&db.column(k)) / size;
    }
    Ok((total, sizes, skipped))
}

/// Both criteria at once. `protos = None` leaves the quantization cost out
/// (for prototype-free solutions).
pub fn criterion_report(
    d: &DissimilarityMatrix,
    protos: Option<PrototypeRef<'_>>,
    assignment: &Assignment,
    h: &Array2<f64>,
) -> Result<CriterionReport> {
    let quantization_cost = protos.map(|p| quantization_cost(d, p, assignment, h)).transpose()?;
    let (clustering_cost, per_unit_sizes, skipped_units) = clustering_cost(d, assignment, h)?;
    Ok(CriterionReport {
        quantization_cost,
        clustering_cost,
        per_unit_sizes,
        skipped_units,
    })
}

/// Left: `Σ_i β_i |x_i - x̄|²` with the weighted barycenter `x̄`.
/// Right: `½ (Σβ)⁻¹ Σ_{i,j} β_i β_j |x_i - x_j|²`.
pub fn koenig_huygens_sides(points: &VectorDataset, weights: ArrayView1<'_, f64>) -> Result<(f64, f64)> {
    if weights.len() != points.n() {
        return Err(Error::DimensionMismatch {
            expected: points.n(),
            found: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter(format!("weight {w} is not positive")));
    }
    let x = points.points();
    let total = weights.sum();
    let bary: Array1<f64> = x.t().dot(&weights) / total;
    let lhs: f64 = x
        .rows()
        .into_iter()
        .zip(weights.iter())
        .map(|(xi, &w)| w * xi.iter().zip(bary.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    let n = points.n();
    let mut pair = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dij: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            pair += weights[i] * weights[j] * dij;
        }
    }
    Ok((lhs, 0.5 * pair / total))
}

/// `|lhs - rhs| <= tol · (1 + |rhs|)`.
pub fn verify_koenig_huygens(points: &VectorDataset, weights: ArrayView1<'_, f64>, tol: f64) -> Result<bool> {
    let (lhs, rhs) = koenig_huygens_sides(points, weights)?;
    Ok((lhs - rhs).abs() <= tol * (1.0 + rhs.abs()))
}

/// Left: `½ (Σβ)⁻¹ Σ_{i,j} β_i β_j D_ij`. Right: `min_m Σ_j β_j D_jm`.
/// No metric precondition, so non-metric witnesses can be evaluated.
pub fn triangle_bound_sides(d: &DissimilarityMatrix, weights: ArrayView1<'_, f64>) -> Result<(f64, f64)> {
    if weights.len() != d.n() {
        return Err(Error::DimensionMismatch {
            expected: d.n(),
            found: weights.len(),
        });
    }
    let total = weights.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("weights must have a positive sum".into()));
    }
    let dw = d.values().dot(&weights);
    let lhs = 0.5 * weights.dot(&dw) / total;
    let rhs = dw.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((lhs, rhs))
}

/// Checks the bound on a metric `D`; non-metric input is an error.
pub fn verify_triangle_bound(d: &DissimilarityMatrix, weights: ArrayView1<'_, f64>, tol: f64) -> Result<bool> {
    let violations = d.validate().metric_violations;
    if violations > 0 {
        return Err(Error::NotMetric { violations });
    }
    let (lhs, rhs) = triangle_bound_sides(d, weights)?;
    Ok(lhs <= rhs + tol)
}

/// Per-unit mean dissimilarity to lattice neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct UMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, one cell per unit.
    pub cells: Array2<f64>,
    /// Cells with a negative value (indefinite `D` only).
    pub negative_cells: usize,
}

pub fn umatrix(protos: PrototypeRef<'_>, d: &DissimilarityMatrix, lattice: &Lattice) -> Result<UMatrix> {
    if protos.k_units() != lattice.k_units() {
        return Err(Error::DimensionMismatch {
            expected: lattice.k_units(),
            found: protos.k_units(),
        });
    }
    umatrix_from(lattice, |a, b| match protos {
        PrototypeRef::Median(p) => Ok(d.get(p.indices[a], p.indices[b])),
        PrototypeRef::Coefficients(p) => prototype_pairwise_dissimilarity(d, p.row(a), p.row(b)),
    })
}

/// U-matrix of vector prototypes under squared Euclidean distance.
pub fn umatrix_vectors(protos: &VectorPrototypes, lattice: &Lattice) -> Result<UMatrix> {
    if protos.k_units() != lattice.k_units() {
        return Err(Error::DimensionMismatch {
            expected: lattice.k_units(),
            found: protos.k_units(),
        });
    }
    let m = protos.values();
    umatrix_from(lattice, |a, b| {
        Ok(m.row(a)
            .iter()
            .zip(m.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum())
    })
}

fn umatrix_from(lattice: &Lattice, pair: impl Fn(usize, usize) -> Result<f64>) -> Result<UMatrix> {
    let mut cells = Array2::zeros((lattice.rows(), lattice.cols()));
    for unit in 0..lattice.k_units() {
        let neighbors = lattice.neighbors(unit);
        let mut sum = 0.0;
        for &l in &neighbors {
            sum += pair(unit, l)?;
        }
        let value = if neighbors.is_empty() {
            0.0
        } else {
            sum / neighbors.len() as f64
        };
        cells[[unit / lattice.cols(), unit % lattice.cols()]] = value;
    }
    let negative_cells = cells.iter().filter(|&&v| v < 0.0).count();
    Ok(UMatrix {
        rows: lattice.rows(),
        cols: lattice.cols(),
        cells,
        negative_cells,
    })
}

impl UMatrix {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        save_csv(path, self.cells.view())
    }

    /// Binary 8-bit PGM, min-max normalized; a constant grid maps to 0.
    pub fn write_pgm<W: Write>(&self, mut writer: W) -> Result<()> {
        let min = self.cells.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        write!(writer, "P5\n{} {}\n255\n", self.cols, self.rows)?;
        let bytes: Vec<u8> = self
            .cells
            .iter()
            .map(|&v| {
                if range > 0.0 {
                    ((v - min) / range * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        writer.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }
}
