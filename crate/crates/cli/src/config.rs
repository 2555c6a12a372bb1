//! Run configuration: a flat `key = value` file merged with command-line
//! overrides. Flags always win over the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dissom::relsom::InitMode;
use dissom::stmp::AnnealingSchedule;
use dissom::{InputKind, ScheduleMode, Topology};
use serde::Serialize;

use crate::error::CliError;

/// Every key accepted in a config file or by `--set`.
pub const KEYS: &[&str] = &[
    "algorithm",
    "input.kind",
    "input.path",
    "grid.rows",
    "grid.cols",
    "grid.topology",
    "schedule.sigma0",
    "schedule.sigma_final",
    "schedule.eps0",
    "schedule.eps_final",
    "schedule.t_max",
    "schedule.mode",
    "seed",
    "init",
    "nystrom.landmarks",
    "nystrom.seed",
    "output.dir",
    "annealing.beta0",
    "annealing.beta_factor",
    "annealing.beta_max",
    "annealing.inner_tol",
    "annealing.inner_max_iters",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line { file: String, line: usize },
    Flag(String),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line { file, line } => write!(f, "{file}:{line}"),
            Origin::Flag(flag) => write!(f, "{flag}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: Origin,
}

/// Raw key/value pairs with the place each one came from.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

fn config_error(origin: &Origin, message: impl Into<String>) -> CliError {
    CliError::Config {
        origin: origin.to_string(),
        message: message.into(),
    }
}

fn check_key(key: &str, origin: &Origin) -> Result<(), CliError> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(config_error(origin, format!("unknown key {key:?}")))
    }
}

impl KeyValues {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, file: &str) -> Result<Self, CliError> {
        let mut kv = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let origin = Origin::Line {
                file: file.to_string(),
                line: idx + 1,
            };
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(&origin, format!("expected `key = value`, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            check_key(key, &origin)?;
            if value.is_empty() {
                return Err(config_error(&origin, format!("missing value for {key}")));
            }
            if let Some(prev) = kv.entries.get(key) {
                return Err(config_error(
                    &origin,
                    format!("duplicate key {key:?} (first set at {})", prev.origin),
                ));
            }
            kv.entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    origin,
                },
            );
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets a value from the command line, replacing any file value.
    pub fn set(&mut self, key: &str, value: impl Into<String>, flag: &str) -> Result<(), CliError> {
        let origin = Origin::Flag(flag.to_string());
        check_key(key, &origin)?;
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                origin,
            },
        );
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let origin = Origin::Flag(format!("--set {pair}"));
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| config_error(&origin, "expected key=value"))?;
        self.set(key.trim(), value.trim(), &format!("--set {pair}"))
    }

    fn get<T: FromStr>(&self, key: &str, expected: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| {
                config_error(
                    &e.origin,
                    format!("invalid value {:?} for {key}: expected {expected}", e.value),
                )
            }),
        }
    }

    fn get_with<T>(&self, key: &str, expected: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).ok_or_else(|| {
                config_error(
                    &e.origin,
                    format!("invalid value {:?} for {key}: expected {expected}", e.value),
                )
            }),
        }
    }

    fn origin(&self, key: &str) -> Origin {
        self.entries
            .get(key)
            .map(|e| e.origin.clone())
            .unwrap_or_else(|| Origin::Flag("defaults".into()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleConfig {
    pub sigma0: Option<f64>,
    pub sigma_final: Option<f64>,
    pub eps0: f64,
    pub eps_final: f64,
    pub t_max: usize,
    pub mode: ScheduleMode,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnnealingConfig {
    pub beta0: Option<f64>,
    pub beta_factor: Option<f64>,
    pub beta_max: Option<f64>,
    pub inner_tol: Option<f64>,
    pub inner_max_iters: Option<usize>,
}

impl AnnealingConfig {
    pub fn is_empty(&self) -> bool {
        self.beta0.is_none()
            && self.beta_factor.is_none()
            && self.beta_max.is_none()
            && self.inner_tol.is_none()
            && self.inner_max_iters.is_none()
    }

    /// Fills unset fields from `base`.
    pub fn over(&self, base: AnnealingSchedule) -> dissom::Result<AnnealingSchedule> {
        AnnealingSchedule::new(
            self.beta0.unwrap_or(base.beta0),
            self.beta_factor.unwrap_or(base.beta_factor),
            self.beta_max.unwrap_or(base.beta_max),
            self.inner_tol.unwrap_or(base.inner_tol),
            self.inner_max_iters.unwrap_or(base.inner_max_iters),
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NystromConfig {
    pub landmarks: usize,
    pub seed: u64,
}

/// Fully resolved training configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub algorithm: String,
    pub input_kind: InputKind,
    pub input_path: PathBuf,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub topology: Topology,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    #[serde(serialize_with = "init_name")]
    pub init: InitMode,
    pub nystrom: Option<NystromConfig>,
    pub annealing: AnnealingConfig,
    pub output_dir: PathBuf,
}

fn init_name<S: serde::Serializer>(init: &InitMode, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(match init {
        InitMode::Indicators => "indicators",
        InitMode::Random => "random",
    })
}

fn parse_input_kind(s: &str) -> Option<InputKind> {
    match s {
        "vectors" => Some(InputKind::Vectors),
        "dissimilarity" => Some(InputKind::Dissimilarity),
        "kernel" => Some(InputKind::Kernel),
        _ => None,
    }
}

fn parse_init(s: &str) -> Option<InitMode> {
    match s {
        "indicators" => Some(InitMode::Indicators),
        "random" => Some(InitMode::Random),
        _ => None,
    }
}

/// Input kind an algorithm reads natively.
pub fn default_input_kind(algorithm: &str) -> InputKind {
    if algorithm.starts_with("classic") {
        InputKind::Vectors
    } else if algorithm.starts_with("kernel") {
        InputKind::Kernel
    } else {
        InputKind::Dissimilarity
    }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, CliError> {
        let algorithm: String = kv
            .get("algorithm", "an algorithm name")?
            .ok_or_else(|| config_error(&kv.origin("algorithm"), "missing required key \"algorithm\""))?;
        let input_kind = kv
            .get_with("input.kind", "vectors, dissimilarity or kernel", parse_input_kind)?
            .unwrap_or_else(|| default_input_kind(&algorithm));
        let input_path: PathBuf = kv
            .get("input.path", "a path")?
            .ok_or_else(|| config_error(&kv.origin("input.path"), "missing required key \"input.path\""))?;
        let positive = "a positive integer";
        let grid_rows = kv.get("grid.rows", positive)?.unwrap_or(5);
        let grid_cols = kv.get("grid.cols", positive)?.unwrap_or(5);
        for key in ["grid.rows", "grid.cols"] {
            if kv.get::<usize>(key, positive)? == Some(0) {
                return Err(config_error(&kv.origin(key), format!("{key} must be at least 1")));
            }
        }
        let topology = kv
            .get_with("grid.topology", "rectangular or hexagonal", |s| s.parse().ok())?
            .unwrap_or_default();
        let t_max = kv.get("schedule.t_max", positive)?.unwrap_or(50);
        if t_max == 0 {
            return Err(config_error(
                &kv.origin("schedule.t_max"),
                "schedule.t_max must be at least 1",
            ));
        }
        let real = "a real number";
        let schedule = ScheduleConfig {
            sigma0: kv.get("schedule.sigma0", real)?,
            sigma_final: kv.get("schedule.sigma_final", real)?,
            eps0: kv.get("schedule.eps0", real)?.unwrap_or(0.5),
            eps_final: kv.get("schedule.eps_final", real)?.unwrap_or(0.01),
            t_max,
            mode: kv
                .get_with("schedule.mode", "exponential_decay or fixed", |s| s.parse().ok())?
                .unwrap_or_default(),
        };
        let landmarks: Option<usize> = kv.get("nystrom.landmarks", positive)?;
        let nystrom_seed: Option<u64> = kv.get("nystrom.seed", "an unsigned integer")?;
        if nystrom_seed.is_some() && landmarks.is_none() {
            return Err(config_error(
                &kv.origin("nystrom.seed"),
                "nystrom.seed given without nystrom.landmarks",
            ));
        }
        let seed = kv.get("seed", "an unsigned integer")?.unwrap_or(0);
        Ok(Self {
            algorithm,
            input_kind,
            input_path,
            grid_rows,
            grid_cols,
            topology,
            schedule,
            seed,
            init: kv
                .get_with("init", "indicators or random", parse_init)?
                .unwrap_or_default(),
            nystrom: landmarks.map(|landmarks| NystromConfig {
                landmarks,
                seed: nystrom_seed.unwrap_or(seed),
            }),
            annealing: AnnealingConfig {
                beta0: kv.get("annealing.beta0", real)?,
                beta_factor: kv.get("annealing.beta_factor", real)?,
                beta_max: kv.get("annealing.beta_max", real)?,
                inner_tol: kv.get("annealing.inner_tol", real)?,
                inner_max_iters: kv.get("annealing.inner_max_iters", positive)?,
            },
            output_dir: kv.get("output.dir", "a path")?.unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}
