//! Prior structure: unit positions, Gaussian neighborhood and time schedules.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default final neighborhood radius.
pub const DEFAULT_SIGMA_FINAL: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Rectangular,
    Hexagonal,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangular" => Ok(Topology::Rectangular),
            "hexagonal" => Ok(Topology::Hexagonal),
            other => Err(Error::InvalidParameter(format!("unknown topology {other:?}"))),
        }
    }
}

/// K units placed in the plane. Unit `k` of a grid sits at row `k / cols`,
/// column `k % cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    positions: Vec<[f64; 2]>,
    rows: usize,
    cols: usize,
    topology: Topology,
}

impl Lattice {
    pub fn grid(rows: usize, cols: usize, topology: Topology) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!("grid {rows}x{cols} has no units")));
        }
        let row_step = match topology {
            Topology::Rectangular => 1.0,
            Topology::Hexagonal => 3f64.sqrt() / 2.0,
        };
        let positions = (0..rows * cols)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                let shift = if topology == Topology::Hexagonal && r % 2 == 1 {
                    0.5
                } else {
                    0.0
                };
                [c as f64 + shift, r as f64 * row_step]
            })
            .collect();
        Ok(Self {
            positions,
            rows,
            cols,
            topology,
        })
    }

    /// Arbitrary positions, treated as a single row. Positions must be distinct.
    pub fn from_positions(positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("lattice needs at least one unit".into()));
        }
        for (a, pa) in positions.iter().enumerate() {
            if positions[..a].contains(pa) {
                return Err(Error::InvalidParameter(format!("duplicate unit position {pa:?}")));
            }
        }
        Ok(Self {
            rows: 1,
            cols: positions.len(),
            positions,
            topology: Topology::Rectangular,
        })
    }

    pub fn k_units(&self) -> usize {
        self.positions.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn squared_distance(&self, k: usize, l: usize) -> f64 {
        let (a, b) = (self.positions[k], self.positions[l]);
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
    }

    pub fn max_distance(&self) -> f64 {
        let k = self.k_units();
        let mut max = 0.0f64;
        for a in 0..k {
            for b in (a + 1)..k {
                max = max.max(self.squared_distance(a, b));
            }
        }
        max.sqrt()
    }

    /// Units at unit distance: 4 on rectangular grids, 6 on hexagonal ones.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.k_units())
            .filter(|&l| l != k && (self.squared_distance(k, l) - 1.0).abs() < 1e-9)
            .collect()
    }

    /// Gaussian neighborhood `h_kl = exp(-|r_k - r_l|² / 2σ²)` at a given radius.
    pub fn neighborhood_at(&self, sigma: f64) -> Array2<f64> {
        let k = self.k_units();
        let denom = 2.0 * sigma * sigma;
        Array2::from_shape_fn((k, k), |(a, b)| {
            if a == b {
                1.0
            } else {
                (-self.squared_distance(a, b) / denom).exp()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    ExponentialDecay,
    Fixed,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential_decay" => Ok(ScheduleMode::ExponentialDecay),
            "fixed" => Ok(ScheduleMode::Fixed),
            other => Err(Error::InvalidParameter(format!("unknown schedule mode {other:?}"))),
        }
    }
}

/// Neighborhood radius over `t_max` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSchedule {
    pub sigma0: f64,
    pub sigma_final: f64,
    pub t_max: usize,
    pub mode: ScheduleMode,
}

impl NeighborhoodSchedule {
    pub fn new(sigma0: f64, sigma_final: f64, t_max: usize, mode: ScheduleMode) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma_final > 0.0) {
            return Err(Error::InvalidParameter("neighborhood radii must be positive".into()));
        }
        if sigma_final > sigma0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_final {sigma_final} exceeds sigma0 {sigma0}"
            )));
        }
        if t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be at least 1".into()));
        }
        Ok(Self {
            sigma0,
            sigma_final,
            t_max,
            mode,
        })
    }

    pub fn fixed(sigma: f64, t_max: usize) -> Result<Self> {
        Self::new(sigma, sigma, t_max, ScheduleMode::Fixed)
    }

    /// Default schedule for a lattice: σ0 is half the lattice diameter,
    /// σ_final is [`DEFAULT_SIGMA_FINAL`].
    pub fn for_lattice(lattice: &Lattice, t_max: usize) -> Result<Self> {
        let sigma0 = (lattice.max_distance() / 2.0).max(DEFAULT_SIGMA_FINAL);
        Self::new(sigma0, DEFAULT_SIGMA_FINAL, t_max, ScheduleMode::ExponentialDecay)
    }

    pub fn sigma_at(&self, t: usize) -> Result<f64> {
        if t >= self.t_max {
            return Err(Error::StepOutOfRange { t, t_max: self.t_max });
        }
        Ok(match self.mode {
            ScheduleMode::Fixed => self.sigma0,
            ScheduleMode::ExponentialDecay => geometric(self.sigma0, self.sigma_final, t, self.t_max),
        })
    }
}

/// Learning rate for online training, decayed geometrically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    pub eps0: f64,
    pub eps_final: f64,
    pub t_max: usize,
}

impl LearningRateSchedule {
    pub fn new(eps0: f64, eps_final: f64, t_max: usize) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 <= 1.0) {
            return Err(Error::InvalidParameter(format!("eps0 {eps0} not in (0, 1]")));
        }
        if !(eps_final > 0.0 && eps_final <= eps0) {
            return Err(Error::InvalidParameter(format!(
                "eps_final {eps_final} not in (0, eps0]"
            )));
        }
        if t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be at least 1".into()));
        }
        Ok(Self { eps0, eps_final, t_max })
    }

    pub fn eps_at(&self, t: usize) -> Result<f64> {
        if t >= self.t_max {
            return Err(Error::StepOutOfRange { t, t_max: self.t_max });
        }
        Ok(geometric(self.eps0, self.eps_final, t, self.t_max))
    }
}

fn geometric(start: f64, end: f64, t: usize, t_max: usize) -> f64 {
    if t_max == 1 || t == 0 {
        return start;
    }
    if t == t_max - 1 {
        return end;
    }
    start * (end / start).powf(t as f64 / (t_max - 1) as f64)
}

/// Neighborhood matrix at step `t` of `schedule`.
pub fn neighborhood(lattice: &Lattice, schedule: &NeighborhoodSchedule, t: usize) -> Result<Array2<f64>> {
    Ok(lattice.neighborhood_at(schedule.sigma_at(t)?))
}

/// Both schedules used by a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub neighborhood: NeighborhoodSchedule,
    pub learning_rate: LearningRateSchedule,
}

impl Schedules {
    pub fn t_max(&self) -> usize {
        self.neighborhood.t_max
    }
}
