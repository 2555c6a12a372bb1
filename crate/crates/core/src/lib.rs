//! Self-organizing maps for dissimilarity and kernel data.
//!
//! Trainers: classic vector SOM (batch and online), Median SOM, relational
//! and kernel SOM (batch and online) and soft topographic mapping by
//! deterministic annealing. [`registry`] exposes them behind one trait,
//! selected by name.

// `!(x > 0.0)` is used on purpose so NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod common;
pub mod dismat;
pub mod error;
pub mod lattice;
pub mod mediansom;
pub mod nystrom;
pub mod quality;
pub mod registry;
pub mod relsom;
pub mod stmp;
pub mod synth;
pub mod vectorsom;
pub mod verify;

pub use common::{Assignment, PhaseTimings};
pub use dismat::{DissimilarityMatrix, KernelMatrix, MatrixKind, ValidationReport, VectorDataset};
pub use error::{Error, Result};
pub use lattice::{Lattice, LearningRateSchedule, NeighborhoodSchedule, ScheduleMode, Schedules, Topology};
pub use registry::{InputKind, Prototypes, Registry, SomAlgorithm, TrainOutcome, TrainParams, TrainingInput};
