//! `mdci` command line: intervals from a config file, the simulation study,
//! and the geometry and limit-experiment checks.
//!
//! Exit codes: 0 success, 2 config or usage error, 3 numeric failure.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mdci", version, about = "Minimum-distance confidence intervals for g(theta) with a vanishing gradient")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Confidence intervals for every estimate in a config file.
    Ci(CiArgs),
    /// Monte Carlo study of rejection rates and interval lengths.
    Simulate(SimulateArgs),
    /// Coverage of the MD acceptance region for a normalized hyperbola.
    Geometry(GeometryArgs),
    /// Flat-power and non-regularity demos in the Gaussian shift experiment.
    Limitexp(LimitexpArgs),
}

#[derive(Debug, Args)]
pub struct CiArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Methods to run, overriding the config (repeat or comma-separate).
    #[arg(long = "method", value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output path, overriding `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Named set of designs; `paper` is the default.
    #[arg(long)]
    pub preset: Option<String>,
    /// S = 500 replications instead of 2000.
    #[arg(long)]
    pub quick: bool,
    /// Run a single design with this θ₂ instead of a preset.
    #[arg(long)]
    pub theta2: Option<f64>,
    /// Correlation for a single design.
    #[arg(long)]
    pub r: Option<f64>,
    /// Replications for a single design.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "method", value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = config::DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory for results.csv and the SVG panels.
    #[arg(long, default_value = "mc-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta1: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub n_draws: usize,
    #[arg(long, default_value_t = config::DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LimitexpArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Draws for the power-curve slopes.
    #[arg(long, default_value_t = 1_000_000)]
    pub n_draws: usize,
    /// Draws per plug-in sample in the non-regularity demo.
    #[arg(long, default_value_t = 100_000)]
    pub ks_draws: usize,
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
    #[arg(long, default_value_t = config::DEFAULT_SEED)]
    pub seed: u64,
}

/// Parse `args`, run the command and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Ci(a) => commands::cmd_ci(&a, out).map(|_| ()),
        Command::Simulate(a) => commands::cmd_simulate(&a, out).map(|_| ()),
        Command::Geometry(a) => commands::cmd_geometry(&a, out),
        Command::Limitexp(a) => commands::cmd_limitexp(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
