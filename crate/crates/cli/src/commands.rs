use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dissom::bench::{run_bench, BenchConfig, BenchTable};
use dissom::dismat::{self, LoadedMatrix, PSD_REL_TOL};
use dissom::lattice::DEFAULT_SIGMA_FINAL;
use dissom::mediansom::MedianPrototypes;
use dissom::quality::{self, CriterionReport, PrototypeRef, UMatrix};
use dissom::registry::{Counters, NystromParams, NystromSummary};
use dissom::relsom::CoefficientPrototypes;
use dissom::stmp::AnnealingSchedule;
use dissom::vectorsom::VectorPrototypes;
use dissom::verify::{self, SuiteReport};
use dissom::{
    InputKind, Lattice, LearningRateSchedule, MatrixKind, NeighborhoodSchedule, PhaseTimings, Prototypes, Registry,
    Schedules, Topology, TrainOutcome, TrainParams, TrainingInput, ValidationReport,
};
use ndarray::Array2;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub fn load_input(path: &Path, kind: InputKind) -> Result<TrainingInput, CliError> {
    Ok(match kind {
        InputKind::Vectors => TrainingInput::Vectors(dismat::load_vectors(path)?),
        InputKind::Dissimilarity => match dismat::load_matrix(path, MatrixKind::Dissimilarity)? {
            LoadedMatrix::Dissimilarity(d) => TrainingInput::Dissimilarity(d),
            LoadedMatrix::Kernel(k) => TrainingInput::Kernel(k),
        },
        InputKind::Kernel => match dismat::load_matrix(path, MatrixKind::Kernel)? {
            LoadedMatrix::Dissimilarity(d) => TrainingInput::Dissimilarity(d),
            LoadedMatrix::Kernel(k) => TrainingInput::Kernel(k),
        },
    })
}

/// Loads and checks a matrix. Returns the report and whether it is usable
/// as the given kind; kernels must be positive semidefinite.
pub fn validate(path: &Path, kind: MatrixKind) -> Result<(ValidationReport, bool), CliError> {
    let report = dismat::load_matrix(path, kind)?.validate();
    let ok = match report.psd_margin {
        Some(margin) => margin >= -PSD_REL_TOL,
        None => true,
    };
    Ok((report, ok))
}

pub fn build_params(cfg: &RunConfig, input: &TrainingInput) -> Result<TrainParams, CliError> {
    let lattice = Lattice::grid(cfg.grid_rows, cfg.grid_cols, cfg.topology)?;
    let s = &cfg.schedule;
    let default_sigma0 = NeighborhoodSchedule::for_lattice(&lattice, s.t_max)?.sigma0;
    let sigma0 = s.sigma0.unwrap_or(default_sigma0);
    let sigma_final = s.sigma_final.unwrap_or(DEFAULT_SIGMA_FINAL.min(sigma0));
    let schedules = Schedules {
        neighborhood: NeighborhoodSchedule::new(sigma0, sigma_final, s.t_max, s.mode)?,
        learning_rate: LearningRateSchedule::new(s.eps0, s.eps_final, s.t_max)?,
    };
    let annealing = if cfg.annealing.is_empty() {
        None
    } else {
        let base = AnnealingSchedule::for_matrix(&input.dissimilarity()?)?;
        Some(cfg.annealing.over(base)?)
    };
    Ok(TrainParams {
        lattice,
        schedules,
        seed: cfg.seed,
        init: cfg.init,
        nystrom: cfg.nystrom.map(|n| NystromParams {
            landmarks: n.landmarks,
            seed: n.seed,
        }),
        annealing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifacts {
    pub prototypes: PathBuf,
    pub assignment: PathBuf,
    pub umatrix_csv: PathBuf,
    pub umatrix_pgm: PathBuf,
    pub trace: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct StmpSummary {
    pub critical_beta: f64,
    pub annealing: AnnealingSchedule,
    pub temperature_steps: usize,
    pub final_entropy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub algorithm: String,
    pub n: usize,
    pub k_units: usize,
    pub iterations: usize,
    pub criteria: CriterionReport,
    pub criterion_trace: Vec<f64>,
    pub clustering_trace: Vec<f64>,
    pub timings_ns: PhaseTimings,
    pub counters: Counters,
    pub umatrix_negative_cells: usize,
    pub nystrom: Option<NystromSummary>,
    pub stmp: Option<StmpSummary>,
    pub artifacts: Artifacts,
}

fn outcome_umatrix(outcome: &TrainOutcome, input: &TrainingInput, lattice: &Lattice) -> Result<UMatrix, CliError> {
    let u = match &outcome.prototypes {
        Prototypes::Vectors(p) => quality::umatrix_vectors(p, lattice)?,
        Prototypes::Median(m) => quality::umatrix(PrototypeRef::Median(m), &input.dissimilarity()?, lattice)?,
        Prototypes::Coefficients(c) => {
            quality::umatrix(PrototypeRef::Coefficients(c), &input.dissimilarity()?, lattice)?
        }
        Prototypes::Soft(_) => {
            let stmp = outcome
                .stmp
                .as_ref()
                .ok_or_else(|| CliError::Validation("soft result without annealing details".into()))?;
            let protos = CoefficientPrototypes::new(stmp.mixing.t().to_owned())?;
            quality::umatrix(PrototypeRef::Coefficients(&protos), &input.dissimilarity()?, lattice)?
        }
    };
    Ok(u)
}

fn write_lines<T: std::fmt::Display>(path: &Path, values: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for v in values {
        writeln!(text, "{v}").expect("writing to a String");
    }
    fs::write(path, text)?;
    Ok(())
}

fn trace_text(outcome: &TrainOutcome) -> String {
    let mut text = String::new();
    if let Some(stmp) = &outcome.stmp {
        text.push_str("beta,inner_iterations,max_delta_e,entropy\n");
        for r in &stmp.trace {
            writeln!(
                text,
                "{},{},{},{}",
                r.beta, r.inner_iterations, r.max_delta_e, r.entropy
            )
            .unwrap();
        }
        return text;
    }
    text.push_str("iteration,criterion,clustering_cost\n");
    let len = outcome.criterion_trace.len().max(outcome.clustering_trace.len());
    let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in 0..len {
        writeln!(
            text,
            "{},{},{}",
            t + 1,
            cell(outcome.criterion_trace.get(t)),
            cell(outcome.clustering_trace.get(t))
        )
        .unwrap();
    }
    text
}

/// Trains one map and writes every artifact into `cfg.output_dir`.
pub fn train(cfg: &RunConfig, registry: &Registry) -> Result<RunReport, CliError> {
    let algorithm = registry.get(&cfg.algorithm).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown algorithm {:?}; available: {}",
            cfg.algorithm,
            registry.names().join(", ")
        ))
    })?;
    let input = load_input(&cfg.input_path, cfg.input_kind)?;
    let params = build_params(cfg, &input)?;
    let outcome = algorithm.train(&input, &params)?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let prototypes_path = match &outcome.prototypes {
        Prototypes::Vectors(p) => {
            let path = dir.join("prototypes.csv");
            dismat::save_csv(&path, p.values())?;
            path
        }
        Prototypes::Median(m) => {
            let path = dir.join("prototypes.txt");
            write_lines(&path, &m.indices)?;
            path
        }
        Prototypes::Coefficients(c) => {
            let path = dir.join("prototypes.csv");
            dismat::save_csv(&path, c.alphas())?;
            path
        }
        Prototypes::Soft(gamma) => {
            let path = dir.join("gamma.csv");
            dismat::save_csv(&path, gamma.view())?;
            path
        }
    };
    let assignment_path = dir.join("assignment.txt");
    write_lines(&assignment_path, &outcome.assignment.bmu)?;

    let u = outcome_umatrix(&outcome, &input, &params.lattice)?;
    let umatrix_csv = dir.join("umatrix.csv");
    let umatrix_pgm = dir.join("umatrix.pgm");
    u.save_csv(&umatrix_csv)?;
    u.save_pgm(&umatrix_pgm)?;

    let trace_path = dir.join("trace.csv");
    fs::write(&trace_path, trace_text(&outcome))?;

    let report = RunReport {
        config: cfg.clone(),
        algorithm: outcome.algorithm.to_string(),
        n: input.n(),
        k_units: params.lattice.k_units(),
        iterations: outcome.iterations,
        criteria: outcome.criteria.clone(),
        criterion_trace: outcome.criterion_trace.clone(),
        clustering_trace: outcome.clustering_trace.clone(),
        timings_ns: outcome.timings,
        counters: outcome.counters.clone(),
        umatrix_negative_cells: u.negative_cells,
        nystrom: outcome.nystrom.clone(),
        stmp: outcome.stmp.as_ref().map(|s| StmpSummary {
            critical_beta: s.critical_beta,
            annealing: s.annealing,
            temperature_steps: s.trace.len(),
            final_entropy: s.soft.entropy(),
        }),
        artifacts: Artifacts {
            prototypes: prototypes_path,
            assignment: assignment_path,
            umatrix_csv,
            umatrix_pgm,
            trace: trace_path,
            report: dir.join("report.json"),
        },
    };
    fs::write(&report.artifacts.report, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn bench(config: &BenchConfig) -> Result<BenchTable, CliError> {
    Ok(run_bench(config)?)
}

/// Runs the named suites, or every suite when `suites` is empty.
pub fn verify(suites: &[String], seed: u64) -> Result<Vec<SuiteReport>, CliError> {
    let names: Vec<&str> = if suites.is_empty() {
        verify::SUITES.to_vec()
    } else {
        suites.iter().map(String::as_str).collect()
    };
    names
        .into_iter()
        .map(|s| verify::run_suite(s, seed).map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeKind {
    Vectors,
    Median,
    Coefficients,
}

impl std::str::FromStr for PrototypeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vectors" => Ok(PrototypeKind::Vectors),
            "median" => Ok(PrototypeKind::Median),
            "coefficients" => Ok(PrototypeKind::Coefficients),
            other => Err(format!(
                "unknown prototype kind {other:?} (vectors, median or coefficients)"
            )),
        }
    }
}

pub struct UMatrixRequest<'a> {
    pub prototypes: &'a Path,
    pub kind: PrototypeKind,
    pub input: Option<(&'a Path, InputKind)>,
    pub rows: usize,
    pub cols: usize,
    pub topology: Topology,
}

fn load_table(path: &Path) -> Result<Array2<f64>, CliError> {
    let rows = dismat::parse_table(fs::File::open(path)?)?;
    let ncols = rows.first().map(Vec::len).ok_or(dissom::Error::Empty)?;
    if let Some((line, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(dissom::Error::Ragged {
            line: line + 1,
            found: row.len(),
            expected: ncols,
        }
        .into());
    }
    let nrows = rows.len();
    Ok(Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect()).expect("shape checked"))
}

fn load_indices(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Validation(format!("{}:{}: expected a point index", path.display(), i + 1)))
        })
        .collect()
}

pub fn umatrix(req: &UMatrixRequest<'_>) -> Result<UMatrix, CliError> {
    let lattice = Lattice::grid(req.rows, req.cols, req.topology)?;
    if req.kind == PrototypeKind::Vectors {
        let protos = VectorPrototypes::new(load_table(req.prototypes)?)?;
        return Ok(quality::umatrix_vectors(&protos, &lattice)?);
    }
    let (path, kind) = req
        .input
        .ok_or_else(|| CliError::Usage("median and coefficient prototypes need --input".into()))?;
    let d = load_input(path, kind)?.dissimilarity()?;
    Ok(match req.kind {
        PrototypeKind::Median => {
            let protos = MedianPrototypes::new(load_indices(req.prototypes)?, d.n())?;
            quality::umatrix(PrototypeRef::Median(&protos), &d, &lattice)?
        }
        _ => {
            let protos = CoefficientPrototypes::new(load_table(req.prototypes)?)?;
            quality::umatrix(PrototypeRef::Coefficients(&protos), &d, &lattice)?
        }
    })
}
