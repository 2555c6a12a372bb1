use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dissom::bench::BenchConfig;
use dissom::{InputKind, MatrixKind, Registry, Topology};
use dissom_cli::commands::{self, PrototypeKind, UMatrixRequest};
use dissom_cli::config::{KeyValues, RunConfig};
use dissom_cli::error::{CliError, EXIT_OK, EXIT_SUITE_FAILED, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "dissom",
    version,
    about = "Self-organizing maps for dissimilarity and kernel data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dissimilarity or kernel matrix and print a JSON report.
    Validate {
        input: PathBuf,
        #[arg(long, default_value = "dissimilarity")]
        kind: MatrixKind,
    },
    /// Train a map and write prototypes, assignment, U-matrix, trace and report.
    Train(TrainArgs),
    /// Time the assignment and update phases across data sizes.
    Bench(BenchArgs),
    /// Run numerical self-checks.
    Verify {
        /// Suites to run; all suites when omitted.
        suites: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute a U-matrix from saved prototypes.
    Umatrix(UMatrixArgs),
    /// List the registered algorithms.
    List,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// vectors, dissimilarity or kernel.
    #[arg(long)]
    input_kind: Option<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nystrom_landmarks: Option<usize>,
    #[arg(long)]
    nystrom_seed: Option<u64>,
    /// Override any configuration key, e.g. `--set grid.rows=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = BenchConfig::default().sizes)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = BenchConfig::default().algorithms)]
    algorithms: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    grid_rows: usize,
    #[arg(long, default_value_t = 5)]
    grid_cols: usize,
    /// Presentations timed per online epoch; the epoch is extrapolated.
    #[arg(long, default_value_t = 8)]
    presentations: usize,
    #[arg(long, default_value_t = 100)]
    nystrom_landmarks: usize,
    /// Write the JSON table here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct UMatrixArgs {
    #[arg(long)]
    prototypes: PathBuf,
    /// vectors, median or coefficients.
    #[arg(long)]
    prototype_kind: PrototypeKind,
    /// Data the prototypes refer to; required for median and coefficients.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "dissimilarity")]
    input_kind: String,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value = "rectangular")]
    topology: Topology,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.pgm`.
    #[arg(long, short)]
    output: PathBuf,
}

fn parse_input_kind(s: &str) -> Result<InputKind, CliError> {
    match s {
        "vectors" => Ok(InputKind::Vectors),
        "dissimilarity" => Ok(InputKind::Dissimilarity),
        "kernel" => Ok(InputKind::Kernel),
        other => Err(CliError::Usage(format!(
            "unknown input kind {other:?} (vectors, dissimilarity or kernel)"
        ))),
    }
}

fn run_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut kv = match &args.config {
        Some(path) => KeyValues::load(path)?,
        None => KeyValues::default(),
    };
    let flags: [(&str, &str, Option<String>); 7] = [
        ("algorithm", "--algorithm", args.algorithm.clone()),
        (
            "input.path",
            "--input",
            args.input.as_ref().map(|p| p.display().to_string()),
        ),
        ("input.kind", "--input-kind", args.input_kind.clone()),
        (
            "output.dir",
            "--output",
            args.output.as_ref().map(|p| p.display().to_string()),
        ),
        ("seed", "--seed", args.seed.map(|s| s.to_string())),
        (
            "nystrom.landmarks",
            "--nystrom-landmarks",
            args.nystrom_landmarks.map(|m| m.to_string()),
        ),
        (
            "nystrom.seed",
            "--nystrom-seed",
            args.nystrom_seed.map(|s| s.to_string()),
        ),
    ];
    for (key, flag, value) in flags {
        if let Some(value) = value {
            kv.set(key, value, flag)?;
        }
    }
    for pair in &args.overrides {
        kv.set_pair(pair)?;
    }
    RunConfig::from_key_values(&kv)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Validate { input, kind } => {
            let (report, ok) = commands::validate(&input, kind)?;
            print_json(&report)?;
            if !ok {
                eprintln!("error: kernel is not positive semidefinite");
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::Train(args) => {
            let cfg = run_config(&args)?;
            let report = commands::train(&cfg, &Registry::builtin())?;
            eprintln!(
                "{}: {} iterations, clustering cost {}, report at {}",
                report.algorithm,
                report.iterations,
                report.criteria.clustering_cost,
                report.artifacts.report.display()
            );
        }
        Command::Bench(args) => {
            let config = BenchConfig {
                sizes: args.sizes,
                algorithms: args.algorithms,
                repeats: args.repeats,
                seed: args.seed,
                grid_rows: args.grid_rows,
                grid_cols: args.grid_cols,
                online_presentations: args.presentations,
                nystrom_landmarks: args.nystrom_landmarks,
            };
            let table = commands::bench(&config)?;
            match &args.output {
                Some(path) => std::fs::write(path, serde_json::to_string_pretty(&table)?)?,
                None => print_json(&table)?,
            }
            if let Some(reason) = &table.partial_reason {
                eprintln!("warning: partial table: {reason}");
            }
        }
        Command::Verify { suites, seed } => {
            let reports = commands::verify(&suites, seed)?;
            let mut failed = false;
            for report in &reports {
                for check in &report.checks {
                    let mark = if check.passed { "PASS" } else { "FAIL" };
                    println!("[{mark}] {}/{}: {}", report.suite, check.name, check.detail);
                }
                failed |= !report.passed();
            }
            if failed {
                return Ok(EXIT_SUITE_FAILED);
            }
        }
        Command::Umatrix(args) => {
            let input_kind = parse_input_kind(&args.input_kind)?;
            let req = UMatrixRequest {
                prototypes: &args.prototypes,
                kind: args.prototype_kind,
                input: args.input.as_deref().map(|p| (p, input_kind)),
                rows: args.rows,
                cols: args.cols,
                topology: args.topology,
            };
            let u = commands::umatrix(&req)?;
            u.save_csv(args.output.with_extension("csv"))?;
            u.save_pgm(args.output.with_extension("pgm"))?;
            if u.negative_cells > 0 {
                eprintln!("warning: {} negative cells (non-Euclidean data)", u.negative_cells);
            }
        }
        Command::List => {
            for algorithm in Registry::builtin().iter() {
                println!("{:<18} {}", algorithm.name(), algorithm.description());
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
