//! Command-line front end: reads a run configuration, runs one experiment
//! and writes CSV/JSON artifacts carrying provenance metadata.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or input error,
//! 3 infeasible physics, 4 fit non-convergence.

pub mod artifact;
mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use artifact::{parse_artifact_header, parse_json_provenance, Artifact, ArtifactHeader, Provenance};
pub use config::{parse_config, RunConfig};
pub use data::{read_xy, XyData};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spin-echo", version, about = "Spin-echo quantum memory simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mc,
    Cf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `run.mode`.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RangeArgs {
    /// Read-out time in microseconds (overrides `scan.T_us`).
    #[arg(long = "T-us")]
    pub t_us: Option<f64>,
    #[arg(long = "dt-min-us")]
    pub dt_min_us: Option<f64>,
    #[arg(long = "dt-max-us")]
    pub dt_max_us: Option<f64>,
    /// Grid points (overrides the block's `points`).
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModelArg {
    DampedCosine,
    GaussianPeak,
    ExpDecay,
    GaussDecay,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV file with x, y and optional yerr columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: FitModelArg,
    /// x column: zero-based index or header name.
    #[arg(long, default_value = "0")]
    pub x_col: data::Column,
    #[arg(long, default_value = "1")]
    pub y_col: data::Column,
    #[arg(long)]
    pub yerr_col: Option<data::Column>,
    /// Hold the decay offset fixed at this value.
    #[arg(long)]
    pub offset: Option<f64>,
    /// Configuration recorded in the provenance (optional).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Synthetic Rabi oscillation and damped-cosine fit.
    Rabi(Common),
    /// Retrieval efficiency versus storage time without echo pulses.
    Dephase {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T-max-us")]
        t_max_us: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Efficiency versus pulse interval at fixed read-out time.
    EchoScan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Optimal interval ratio versus Raman angle.
    RatioScan {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T-us")]
        t_us: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Angular distribution of π-pulse read-out noise.
    NoiseMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Write/read cross-correlation versus storage time.
    G2Curve {
        #[command(flatten)]
        common: Common,
        /// Only the echo-on or echo-off curve (default: both).
        #[arg(long, value_enum)]
        echo: Option<Switch>,
    },
    /// Rephasing pulse schedule for one read-out time.
    Schedule {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T-us")]
        t_us: Option<f64>,
    },
    /// Fit a model to a CSV data file.
    Fit(FitArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rabi(_) => "rabi",
            Command::Dephase { .. } => "dephase",
            Command::EchoScan { .. } => "echo-scan",
            Command::RatioScan { .. } => "ratio-scan",
            Command::NoiseMap { .. } => "noise-map",
            Command::G2Curve { .. } => "g2-curve",
            Command::Schedule { .. } => "schedule",
            Command::Fit(_) => "fit",
        }
    }

    fn workers(&self) -> Option<usize> {
        match self {
            Command::Rabi(c)
            | Command::Dephase { common: c, .. }
            | Command::EchoScan { common: c, .. }
            | Command::RatioScan { common: c, .. }
            | Command::NoiseMap { common: c, .. }
            | Command::G2Curve { common: c, .. }
            | Command::Schedule { common: c, .. } => c.workers,
            Command::Fit(_) => None,
        }
    }
}

/// Result of a finished command: the files written, text for stdout and
/// a non-fatal error that still determines the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub stdout: String,
    pub warning: Option<CliError>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.warning.as_ref().map_or(0, CliError::exit_code)
    }
}

/// Run a parsed command. Inputs are parsed and validated, and every result
/// computed, before the output directory is touched.
pub fn execute(cmd: &Command) -> Result<Outcome, CliError> {
    let report = match cmd.workers() {
        Some(0) => return Err(CliError::Config("`--workers` must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(|| commands::dispatch(cmd))?,
        None => commands::dispatch(cmd)?,
    };
    let files = write_artifacts(&report.out_dir, &report.artifacts)?;
    Ok(Outcome {
        files,
        stdout: report.stdout,
        warning: report.warning,
    })
}

fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            std::fs::write(&path, &a.contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            print!("{}", out.stdout);
            if let Some(w) = &out.warning {
                eprintln!("spin-echo {}: {w}", cli.command.name());
            }
            out.exit_code()
        }
        Err(e) => {
            eprintln!("spin-echo {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
