//! Dissimilarity, kernel and vector data: construction, validation and CSV I/O.
//!
//! Every matrix type is validated on construction and immutable afterwards.
//! Slightly asymmetric inputs (within [`SYMMETRY_TOL`]) are symmetrized by
//! averaging the two mirrored entries.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum tolerated |A_ij - A_ji| before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Diagonal entries below this count as zero.
pub const ZERO_DIAG_TOL: f64 = 1e-12;
/// Relative eigenvalue margin for the PSD check.
pub const PSD_REL_TOL: f64 = 1e-8;
/// Kernel-derived dissimilarities below `-NEGATIVE_TOL` signal a non-PSD kernel.
pub const NEGATIVE_TOL: f64 = 1e-9;
/// Number of sampled triples in the metric check when N³ is larger.
pub const METRIC_SAMPLES: usize = 100_000;

const METRIC_SEED: u64 = 0x5eed_d15c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Dissimilarity,
    Kernel,
}

impl std::str::FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dissimilarity" => Ok(MatrixKind::Dissimilarity),
            "kernel" => Ok(MatrixKind::Kernel),
            other => Err(Error::InvalidParameter(format!(
                "unknown matrix kind {other:?} (expected dissimilarity or kernel)"
            ))),
        }
    }
}

/// Summary of the structural checks run on a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub min_entry: f64,
    pub zero_diag: bool,
    pub metric_violations: usize,
    /// Smallest eigenvalue divided by the largest eigenvalue magnitude.
    /// Only computed for kernels.
    pub psd_margin: Option<f64>,
    /// Pairs with `D_ii > D_ij`; reported, never enforced.
    pub ordering_violations: usize,
}

/// Symmetric, nonnegative N×N dissimilarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    values: Array2<f64>,
    zero_diag: bool,
}

impl DissimilarityMatrix {
    /// Validates and symmetrizes `values`.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let values = symmetrize(values)?;
        for ((i, j), &v) in values.indexed_iter() {
            if v < 0.0 {
                return Err(Error::NegativeEntry { i, j, value: v });
            }
        }
        let zero_diag = values.diag().iter().all(|d| d.abs() < ZERO_DIAG_TOL);
        Ok(Self { values, zero_diag })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn zero_diag(&self) -> bool {
        self.zero_diag
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Symmetric similarity matrix. Positive semidefiniteness is checked on demand
/// through [`KernelMatrix::psd_margin`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: Array2<f64>,
}

impl KernelMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        Ok(Self {
            values: symmetrize(values)?,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// λ_min / max|λ|; zero for the all-zero matrix.
    pub fn psd_margin(&self) -> f64 {
        let eig = symmetric_eigenvalues(self.values.view());
        let scale = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        eig.iter().cloned().fold(f64::INFINITY, f64::min) / scale
    }

    pub fn is_psd(&self) -> bool {
        self.psd_margin() >= -PSD_REL_TOL
    }
}

/// N points in R^p.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    points: Array2<f64>,
}

impl VectorDataset {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Empty);
        }
        if let Some(((i, j), _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { i, j });
        }
        Ok(Self { points })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }
}

fn symmetrize(mut values: Array2<f64>) -> Result<Array2<f64>> {
    let n = values.nrows();
    if n == 0 {
        return Err(Error::Empty);
    }
    if values.ncols() != n {
        return Err(Error::NonSquare {
            rows: n,
            row: 0,
            cols: values.ncols(),
        });
    }
    if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { i, j });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (values[[i, j]], values[[j, i]]);
            let diff = (a - b).abs();
            if diff >= SYMMETRY_TOL {
                return Err(Error::Asymmetric { i, j, diff });
            }
            if a != b {
                let mean = 0.5 * (a + b);
                values[[i, j]] = mean;
                values[[j, i]] = mean;
            }
        }
    }
    Ok(values)
}

pub(crate) fn symmetric_eigenvalues(values: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = values.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| values[[i, j]]);
    SymmetricEigen::new(m).eigenvalues.iter().cloned().collect()
}

/// `D_ij = K_ii + K_jj - 2 K_ij`, with an exactly zero diagonal.
pub fn kernel_to_dissimilarity(kernel: &KernelMatrix) -> Result<DissimilarityMatrix> {
    let n = kernel.n();
    let k = kernel.values();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
            if v < -NEGATIVE_TOL {
                return Err(Error::NotPsd { i, j, value: v });
            }
            let v = v.max(0.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(DissimilarityMatrix {
        values: d,
        zero_diag: true,
    })
}

/// Pairwise squared Euclidean distances.
pub fn squared_euclidean(dataset: &VectorDataset) -> DissimilarityMatrix {
    let n = dataset.n();
    let x = dataset.points();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let v: f64 = xi.iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    DissimilarityMatrix {
        values: d,
        zero_diag: true,
    }
}

/// Counts triangle-inequality violations `D_ij > D_il + D_lj`, exhaustively
/// when N³ ≤ [`METRIC_SAMPLES`] and over uniformly sampled triples otherwise.
pub fn metric_violations(values: ArrayView2<'_, f64>) -> usize {
    let n = values.nrows();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slack = 1e-12 * scale.max(1.0);
    let violated = |i: usize, j: usize, l: usize| values[[i, j]] > values[[i, l]] + values[[l, j]] + slack;
    let total = (n as u128).pow(3);
    if total <= METRIC_SAMPLES as u128 {
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    count += violated(i, j, l) as usize;
                }
            }
        }
        count
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(METRIC_SEED);
        (0..METRIC_SAMPLES)
            .filter(|_| {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let l = rng.random_range(0..n);
                violated(i, j, l)
            })
            .count()
    }
}

fn base_report(values: ArrayView2<'_, f64>) -> ValidationReport {
    let n = values.nrows();
    let mut max_asymmetry = 0.0f64;
    let mut ordering_violations = 0;
    for i in 0..n {
        for j in 0..n {
            max_asymmetry = max_asymmetry.max((values[[i, j]] - values[[j, i]]).abs());
            if values[[i, i]] > values[[i, j]] {
                ordering_violations += 1;
            }
        }
    }
    ValidationReport {
        symmetric: max_asymmetry == 0.0,
        max_asymmetry,
        min_entry: values.iter().cloned().fold(f64::INFINITY, f64::min),
        zero_diag: values.diag().iter().all(|d| d.abs() < ZERO_DIAG_TOL),
        metric_violations: 0,
        psd_margin: None,
        ordering_violations,
    }
}

impl DissimilarityMatrix {
    pub fn validate(&self) -> ValidationReport {
        ValidationReport {
            metric_violations: metric_violations(self.values.view()),
            ..base_report(self.values.view())
        }
    }
}

impl KernelMatrix {
    pub fn validate(&self) -> ValidationReport {
        ValidationReport {
            psd_margin: Some(self.psd_margin()),
            ..base_report(self.values.view())
        }
    }
}

/// A matrix loaded from disk, tagged by kind.
#[derive(Debug, Clone)]
pub enum LoadedMatrix {
    Dissimilarity(DissimilarityMatrix),
    Kernel(KernelMatrix),
}

impl LoadedMatrix {
    pub fn validate(&self) -> ValidationReport {
        match self {
            LoadedMatrix::Dissimilarity(d) => d.validate(),
            LoadedMatrix::Kernel(k) => k.validate(),
        }
    }
}

/// Parses comma-separated reals. A leading line starting with `#` is skipped.
pub fn parse_table<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    column: c + 1,
                    cell: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_array(rows: Vec<Vec<f64>>, square: bool) -> Result<Array2<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Empty);
    }
    let ncols = if square { nrows } else { rows[0].len() };
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(if square {
                Error::NonSquare {
                    rows: nrows,
                    row: r,
                    cols: row.len(),
                }
            } else {
                Error::Ragged {
                    line: r + 1,
                    found: row.len(),
                    expected: ncols,
                }
            });
        }
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((nrows, ncols), flat).expect("shape checked"))
}

pub fn read_matrix<R: Read>(reader: R, kind: MatrixKind) -> Result<LoadedMatrix> {
    let values = rows_to_array(parse_table(reader)?, true)?;
    Ok(match kind {
        MatrixKind::Dissimilarity => LoadedMatrix::Dissimilarity(DissimilarityMatrix::new(values)?),
        MatrixKind::Kernel => LoadedMatrix::Kernel(KernelMatrix::new(values)?),
    })
}

pub fn load_matrix(path: impl AsRef<Path>, kind: MatrixKind) -> Result<LoadedMatrix> {
    read_matrix(File::open(path)?, kind)
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<VectorDataset> {
    let rows = parse_table(File::open(path)?)?;
    VectorDataset::new(rows_to_array(rows, false)?)
}

/// Writes any 2-D array as headerless CSV. `f64` formatting is shortest
/// round-trip, so loading the file back is bit-identical.
pub fn write_csv<W: Write>(writer: W, values: ArrayView2<'_, f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in values.rows() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, values: ArrayView2<'_, f64>) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn parse_d(text: &str) -> Result<DissimilarityMatrix> {
        match read_matrix(text.as_bytes(), MatrixKind::Dissimilarity)? {
            LoadedMatrix::Dissimilarity(d) => Ok(d),
            LoadedMatrix::Kernel(_) => unreachable!(),
        }
    }

    #[test]
    fn loads_small_matrix() {
        let d = parse_d("0,1,9\n1,0,4\n9,4,0").unwrap();
        assert_eq!(d.n(), 3);
        assert!(d.zero_diag());
        assert_eq!(d.get(0, 2), 9.0);
    }

    #[test]
    fn accepts_hash_header() {
        let d = parse_d("# three points\n0,1,9\n1,0,4\n9,4,0\n").unwrap();
        assert_eq!(d.n(), 3);
    }

    #[test]
    fn symmetrizes_small_drift() {
        let d = parse_d("0,1\n1.000000000001,0").unwrap();
        assert_eq!(d.get(0, 1), d.get(1, 0));
        assert!((d.get(0, 1) - (1.0 + 5e-13)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(parse_d("0,1,2\n1,0,3"), Err(Error::NonSquare { .. })));
        assert!(matches!(parse_d("0,x\n1,0"), Err(Error::Parse { column: 2, .. })));
        assert!(matches!(parse_d("0,-1\n-1,0"), Err(Error::NegativeEntry { .. })));
        assert!(matches!(parse_d("0,1\n1.1,0"), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn nonzero_diagonal_is_a_flag_not_an_error() {
        let d = parse_d("1,2\n2,1").unwrap();
        assert!(!d.zero_diag());
    }

    #[test]
    fn kernel_conversion() {
        let k = KernelMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(
            kernel_to_dissimilarity(&k).unwrap().values(),
            array![[0.0, 2.0], [2.0, 0.0]]
        );
        let k = KernelMatrix::new(array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let d = kernel_to_dissimilarity(&k).unwrap();
        assert_eq!(d.values(), array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(d.zero_diag());
    }

    #[test]
    fn kernel_conversion_rejects_indefinite() {
        let k = KernelMatrix::new(array![[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(kernel_to_dissimilarity(&k), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn squared_euclidean_examples() {
        let data = VectorDataset::new(array![[0.0], [1.0], [3.0]]).unwrap();
        let d = squared_euclidean(&data);
        assert_eq!(d.values(), array![[0.0, 1.0, 9.0], [1.0, 0.0, 4.0], [9.0, 4.0, 0.0]]);

        let single = VectorDataset::new(array![[2.5, -1.0]]).unwrap();
        assert_eq!(squared_euclidean(&single).values(), array![[0.0]]);

        let dup = VectorDataset::new(array![[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]]).unwrap();
        assert_eq!(squared_euclidean(&dup).get(0, 2), 0.0);
    }

    #[test]
    fn metric_check() {
        let data = VectorDataset::new(array![[0.0], [1.0], [3.0]]).unwrap();
        let report = squared_euclidean(&data).validate();
        // triple (0, 2, 1): 9 > 1 + 4
        assert!(report.metric_violations > 0);
        assert_eq!(squared_euclidean(&data).get(0, 2), 9.0);

        let line = DissimilarityMatrix::new(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]).unwrap();
        let report = line.validate();
        assert_eq!(report.metric_violations, 0);
        assert!(report.symmetric && report.zero_diag);
        assert_eq!(report.psd_margin, None);
    }

    #[test]
    fn kernel_identity_report() {
        let k = KernelMatrix::new(Array2::eye(4)).unwrap();
        let report = k.validate();
        assert!(report.symmetric);
        assert!(report.psd_margin.unwrap() >= 0.0);
        assert!(k.is_psd());
    }

    #[test]
    fn report_json_field_names() {
        let k = KernelMatrix::new(Array2::eye(2)).unwrap();
        let json = serde_json::to_value(k.validate()).unwrap();
        for key in [
            "symmetric",
            "max_asymmetry",
            "min_entry",
            "zero_diag",
            "metric_violations",
            "psd_margin",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let values = array![
            [0.0, 0.1 + 0.2, 1e-300],
            [0.1 + 0.2, 0.0, 7.0 / 3.0],
            [1e-300, 7.0 / 3.0, 0.0]
        ];
        let d = DissimilarityMatrix::new(values).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, d.values()).unwrap();
        let back = parse_d(std::str::from_utf8(&buf).unwrap()).unwrap();
        for (a, b) in d.values().iter().zip(back.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
