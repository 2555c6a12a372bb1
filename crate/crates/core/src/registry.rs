//! Every trainer behind one trait, looked up by name.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::common::{Assignment, PhaseTimings};
use crate::dismat::{kernel_to_dissimilarity, squared_euclidean, DissimilarityMatrix, KernelMatrix, VectorDataset};
use crate::error::{Error, Result};
use crate::lattice::{neighborhood, Lattice, Schedules};
use crate::mediansom::{train_median, MedianPrototypes};
use crate::nystrom::{nystrom_fit, nystrom_fit_dissimilarity, NystromFactor, NystromGeometry};
use crate::quality::{clustering_cost, criterion_report, CriterionReport, PrototypeRef};
use crate::relsom::{
    train_coefficients, CoefficientPrototypes, CoefficientTrainResult, InitMode, KernelGeometry, RelationalGeometry,
};
use crate::stmp::{critical_beta, train_stmp, AnnealingSchedule, SoftAssignment, StmpTraceRow};
use crate::vectorsom::{self, TrainMode, VectorPrototypes};

/// Pairs sampled when reporting Nyström reconstruction error.
pub const NYSTROM_ERROR_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Vectors,
    Dissimilarity,
    Kernel,
}

#[derive(Debug, Clone)]
pub enum TrainingInput {
    Vectors(VectorDataset),
    Dissimilarity(DissimilarityMatrix),
    Kernel(KernelMatrix),
}

impl TrainingInput {
    pub fn kind(&self) -> InputKind {
        match self {
            TrainingInput::Vectors(_) => InputKind::Vectors,
            TrainingInput::Dissimilarity(_) => InputKind::Dissimilarity,
            TrainingInput::Kernel(_) => InputKind::Kernel,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            TrainingInput::Vectors(v) => v.n(),
            TrainingInput::Dissimilarity(d) => d.n(),
            TrainingInput::Kernel(k) => k.n(),
        }
    }

    /// Dissimilarity view of any input: squared Euclidean for vectors,
    /// `K_ii + K_jj - 2K_ij` for kernels.
    pub fn dissimilarity(&self) -> Result<DissimilarityMatrix> {
        match self {
            TrainingInput::Vectors(v) => Ok(squared_euclidean(v)),
            TrainingInput::Dissimilarity(d) => Ok(d.clone()),
            TrainingInput::Kernel(k) => kernel_to_dissimilarity(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NystromParams {
    pub landmarks: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub lattice: Lattice,
    pub schedules: Schedules,
    pub seed: u64,
    pub init: InitMode,
    pub nystrom: Option<NystromParams>,
    /// Defaults to [`AnnealingSchedule::for_matrix`].
    pub annealing: Option<AnnealingSchedule>,
}

#[derive(Debug, Clone)]
pub enum Prototypes {
    Vectors(VectorPrototypes),
    Median(MedianPrototypes),
    Coefficients(CoefficientPrototypes),
    /// STMP has no prototypes; its result is the N×K membership matrix.
    Soft(Array2<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct NystromSummary {
    pub landmarks: usize,
    pub seed: u64,
    pub kept_rank: usize,
    pub sampled_pairs: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Counters {
    pub collisions_detected: usize,
    pub collisions_unresolved: usize,
    pub negative_distances: usize,
    pub empty_units: usize,
}

#[derive(Debug, Clone)]
pub struct StmpDetails {
    pub critical_beta: f64,
    pub annealing: AnnealingSchedule,
    pub soft: SoftAssignment,
    /// Final mixing coefficients, N×K; column `s` is a coefficient prototype.
    pub mixing: Array2<f64>,
    pub trace: Vec<StmpTraceRow>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub algorithm: &'static str,
    pub prototypes: Prototypes,
    pub assignment: Assignment,
    /// The trainer's own objective per iteration or epoch.
    pub criterion_trace: Vec<f64>,
    /// Clustering cost of the assignment used at each iteration, under that
    /// iteration's neighborhood.
    pub clustering_trace: Vec<f64>,
    pub iterations: usize,
    pub timings: PhaseTimings,
    pub counters: Counters,
    /// Final criteria under the last neighborhood of the run.
    pub criteria: CriterionReport,
    pub stmp: Option<StmpDetails>,
    pub nystrom: Option<NystromSummary>,
}

pub trait SomAlgorithm: Send + Sync {
    fn name(&self) -> &'static str;
    fn input_kind(&self) -> InputKind;
    fn description(&self) -> &'static str;
    fn supports_nystrom(&self) -> bool {
        false
    }
    fn train(&self, input: &TrainingInput, params: &TrainParams) -> Result<TrainOutcome>;
}

/// Name → algorithm table.
pub struct Registry {
    algorithms: Vec<Box<dyn SomAlgorithm>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { algorithms: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ClassicSom { mode: TrainMode::Batch }));
        r.register(Box::new(ClassicSom {
            mode: TrainMode::Online,
        }));
        r.register(Box::new(MedianSom));
        r.register(Box::new(CoefficientSom {
            backend: Backend::Relational,
            mode: TrainMode::Batch,
        }));
        r.register(Box::new(CoefficientSom {
            backend: Backend::Relational,
            mode: TrainMode::Online,
        }));
        r.register(Box::new(CoefficientSom {
            backend: Backend::Kernel,
            mode: TrainMode::Batch,
        }));
        r.register(Box::new(CoefficientSom {
            backend: Backend::Kernel,
            mode: TrainMode::Online,
        }));
        r.register(Box::new(Stmp));
        r
    }

    /// Replaces any algorithm with the same name.
    pub fn register(&mut self, algorithm: Box<dyn SomAlgorithm>) {
        self.algorithms.retain(|a| a.name() != algorithm.name());
        self.algorithms.push(algorithm);
    }

    pub fn get(&self, name: &str) -> Option<&dyn SomAlgorithm> {
        self.algorithms.iter().find(|a| a.name() == name).map(|a| a.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.algorithms.iter().map(|a| a.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn SomAlgorithm> {
        self.algorithms.iter().map(|a| a.as_ref())
    }

    pub fn train(&self, name: &str, input: &TrainingInput, params: &TrainParams) -> Result<TrainOutcome> {
        let algorithm = self.get(name).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown algorithm {name:?}; known: {}",
                self.names().join(", ")
            ))
        })?;
        algorithm.train(input, params)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn check_kind(algorithm: &dyn SomAlgorithm, input: &TrainingInput, params: &TrainParams) -> Result<()> {
    let compatible = match algorithm.input_kind() {
        InputKind::Vectors => input.kind() == InputKind::Vectors,
        InputKind::Kernel => input.kind() == InputKind::Kernel,
        InputKind::Dissimilarity => true,
    };
    if !compatible {
        let what = match algorithm.input_kind() {
            InputKind::Vectors => "vector",
            InputKind::Kernel => "kernel",
            InputKind::Dissimilarity => "dissimilarity",
        };
        return Err(Error::Incompatible(format!(
            "{what} input required for {}",
            algorithm.name()
        )));
    }
    if params.nystrom.is_some() && !algorithm.supports_nystrom() {
        return Err(Error::Incompatible(format!(
            "{} does not support Nyström acceleration",
            algorithm.name()
        )));
    }
    Ok(())
}

/// Clustering cost of each recorded assignment under the neighborhood of its
/// step.
fn clustering_trace(d: &DissimilarityMatrix, history: &[Assignment], params: &TrainParams) -> Result<Vec<f64>> {
    history
        .iter()
        .enumerate()
        .map(|(t, a)| Ok(clustering_cost(d, a, &neighborhood(&params.lattice, &params.schedules.neighborhood, t)?)?.0))
        .collect()
}

fn last_neighborhood(params: &TrainParams, iterations: usize) -> Result<Array2<f64>> {
    let t = iterations.clamp(1, params.schedules.t_max()) - 1;
    neighborhood(&params.lattice, &params.schedules.neighborhood, t)
}

struct ClassicSom {
    mode: TrainMode,
}

impl SomAlgorithm for ClassicSom {
    fn name(&self) -> &'static str {
        match self.mode {
            TrainMode::Batch => "classic-batch",
            TrainMode::Online => "classic-online",
        }
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Vectors
    }

    fn description(&self) -> &'static str {
        match self.mode {
            TrainMode::Batch => "vector SOM, batch weighted means",
            TrainMode::Online => "vector SOM, stochastic updates",
        }
    }

    fn train(&self, input: &TrainingInput, params: &TrainParams) -> Result<TrainOutcome> {
        check_kind(self, input, params)?;
        let TrainingInput::Vectors(data) = input else {
            unreachable!()
        };
        let r = vectorsom::train(data, &params.lattice, &params.schedules, params.seed, self.mode)?;
        let d = squared_euclidean(data);
        let h = last_neighborhood(params, r.iterations)?;
        let mut criteria = criterion_report(&d, None, &r.assignment, &h)?;
        criteria.quantization_cost = Some(vectorsom::energy(data, &r.prototypes, &r.assignment, &h));
        Ok(TrainOutcome {
            algorithm: self.name(),
            clustering_trace: clustering_trace(&d, &r.history, params)?,
            criterion_trace: r.energy_trace,
            prototypes: Prototypes::Vectors(r.prototypes),
            assignment: r.assignment,
            iterations: r.iterations,
            timings: r.timings,
            counters: Counters {
                empty_units: r.empty_units,
                ..Counters::default()
            },
            criteria,
            stmp: None,
            nystrom: None,
        })
    }
}

struct MedianSom;

impl SomAlgorithm for MedianSom {
    fn name(&self) -> &'static str {
        "median"
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Dissimilarity
    }

    fn description(&self) -> &'static str {
        "Median SOM, prototypes restricted to data points"
    }

    fn train(&self, input: &TrainingInput, params: &TrainParams) -> Result<TrainOutcome> {
        check_kind(self, input, params)?;
        let d = input.dissimilarity()?;
        let r = train_median(&d, &params.lattice, &params.schedules.neighborhood, params.seed)?;
        let h = last_neighborhood(params, r.iterations)?;
        let criteria = criterion_report(&d, Some(PrototypeRef::Median(&r.prototypes)), &r.assignment, &h)?;
        Ok(TrainOutcome {
            algorithm: self.name(),
            clustering_trace: clustering_trace(&d, &r.history, params)?,
            criterion_trace: r.cost_trace,
            prototypes: Prototypes::Median(r.prototypes),
            assignment: r.assignment,
            iterations: r.iterations,
            timings: r.timings,
            counters: Counters {
                collisions_detected: r.collisions_detected,
                collisions_unresolved: r.collisions_unresolved,
                ..Counters::default()
            },
            criteria,
            stmp: None,
            nystrom: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Backend {
    Relational,
    Kernel,
}

struct CoefficientSom {
    backend: Backend,
    mode: TrainMode,
}

impl SomAlgorithm for CoefficientSom {
    fn name(&self) -> &'static str {
        match (self.backend, self.mode) {
            (Backend::Relational, TrainMode::Batch) => "relational-batch",
            (Backend::Relational, TrainMode::Online) => "relational-online",
            (Backend::Kernel, TrainMode::Batch) => "kernel-batch",
            (Backend::Kernel, TrainMode::Online) => "kernel-online",
        }
    }

    fn input_kind(&self) -> InputKind {
        match self.backend {
            Backend::Relational => InputKind::Dissimilarity,
            Backend::Kernel => InputKind::Kernel,
        }
    }

    fn description(&self) -> &'static str {
        match (self.backend, self.mode) {
            (Backend::Relational, TrainMode::Batch) => "relational SOM, batch coefficient update",
            (Backend::Relational, TrainMode::Online) => "relational SOM, stochastic coefficient update",
            (Backend::Kernel, TrainMode::Batch) => "kernel SOM, batch coefficient update",
            (Backend::Kernel, TrainMode::Online) => "kernel SOM, stochastic coefficient update",
        }
    }

    fn supports_nystrom(&self) -> bool {
        true
    }

    fn train(&self, input: &TrainingInput, params: &TrainParams) -> Result<TrainOutcome> {
        check_kind(self, input, params)?;
        let d = input.dissimilarity()?;
        let run = |geom: &dyn crate::relsom::CoefficientGeometry| -> Result<CoefficientTrainResult> {
            train_coefficients(
                geom,
                &params.lattice,
                &params.schedules,
                params.seed,
                self.mode,
                params.init,
            )
        };
        let (r, nystrom) = match (params.nystrom, self.backend, input) {
            (Some(np), _, _) => {
                let factor: NystromFactor = match input {
                    TrainingInput::Kernel(k) => nystrom_fit(k, np.landmarks, np.seed)?,
                    _ => nystrom_fit_dissimilarity(&d, np.landmarks, np.seed)?,
                };
                let (mean, max) = factor.sampled_error(&d, NYSTROM_ERROR_SAMPLES, np.seed);
                let summary = NystromSummary {
                    landmarks: np.landmarks,
                    seed: np.seed,
                    kept_rank: factor.kept_rank(),
                    sampled_pairs: NYSTROM_ERROR_SAMPLES,
                    mean_abs_error: mean,
                    max_abs_error: max,
                };
                (run(&NystromGeometry { factor: &factor })?, Some(summary))
            }
            (None, Backend::Kernel, TrainingInput::Kernel(k)) => (run(&KernelGeometry { k })?, None),
            (None, _, _) => (run(&RelationalGeometry { d: &d })?, None),
        };
        let h = last_neighborhood(params, r.iterations)?;
        let criteria = criterion_report(&d, Some(PrototypeRef::Coefficients(&r.prototypes)), &r.assignment, &h)?;
        Ok(TrainOutcome {
            algorithm: self.name(),
            clustering_trace: clustering_trace(&d, &r.history, params)?,
            criterion_trace: r.criterion_trace,
            prototypes: Prototypes::Coefficients(r.prototypes),
            assignment: r.assignment,
            iterations: r.iterations,
            timings: r.timings,
            counters: Counters {
                negative_distances: r.negative_distances,
                empty_units: r.empty_units,
                ..Counters::default()
            },
            criteria,
            stmp: None,
            nystrom,
        })
    }
}

struct Stmp;

impl SomAlgorithm for Stmp {
    fn name(&self) -> &'static str {
        "stmp"
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Dissimilarity
    }

    fn description(&self) -> &'static str {
        "soft topographic mapping, deterministic annealing with a fixed neighborhood"
    }

    /// Uses the neighborhood at radius `sigma0` for the whole run.
    fn train(&self, input: &TrainingInput, params: &TrainParams) -> Result<TrainOutcome> {
        check_kind(self, input, params)?;
        let d = input.dissimilarity()?;
        let h = params.lattice.neighborhood_at(params.schedules.neighborhood.sigma0);
        let beta_c = critical_beta(&d)?;
        let annealing = match params.annealing {
            Some(a) => a,
            None => AnnealingSchedule::for_matrix(&d)?,
        };
        let start = std::time::Instant::now();
        let r = train_stmp(&d, &h, &annealing, params.seed)?;
        let timings = PhaseTimings {
            assignment_ns: start.elapsed().as_nanos(),
            update_ns: 0,
        };
        let criteria = criterion_report(&d, None, &r.assignment, &h)?;
        Ok(TrainOutcome {
            algorithm: self.name(),
            criterion_trace: r.trace.iter().map(|row| row.entropy).collect(),
            clustering_trace: vec![criteria.clustering_cost],
            prototypes: Prototypes::Soft(r.soft.gamma.clone()),
            assignment: r.assignment,
            iterations: r.trace.iter().map(|row| row.inner_iterations).sum(),
            timings,
            counters: Counters::default(),
            criteria,
            stmp: Some(StmpDetails {
                critical_beta: beta_c,
                annealing,
                soft: r.soft,
                mixing: r.mixing,
                trace: r.trace,
            }),
            nystrom: None,
        })
    }
}
