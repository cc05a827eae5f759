//! Configuration-driven driver for joint-diffusion experiments: runs
//! generations, parameter sweeps, canvas diagnostics, and similarity-bound
//! validations, serializing every artifact deterministically.
//!
//! Exit codes: 0 success, 1 configuration or file-format error, 2 runtime
//! error, 3 bound exceedance.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::ModeName;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, flags, or file format; exit 1.
    Config(String),
    /// Errors raised while running a valid configuration; exit 2, except
    /// malformed artifact files which stay configuration errors.
    Runtime(safa_core::error::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<safa_core::error::Error> for CliError {
    fn from(e: safa_core::error::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(safa_core::error::Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(safa_core::error::Error::Format(_)) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "safa", version, about = "Joint-diffusion experiment driver")]
struct Cli {
    /// Worker threads for per-step denoising and validation trials
    /// (default: all hardware threads).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one joint generation and write canvas, renders, trajectory log,
    /// metrics, and manifest.
    Generate(GenerateArgs),
    /// Re-run a generation over a parameter grid; one subdirectory per
    /// point plus an aggregate CSV.
    Sweep(SweepArgs),
    /// Monte-Carlo check of the trajectory-similarity bound; exits 3 when
    /// the violation rate provably exceeds its failure probability.
    ValidateBounds(ValidateArgs),
    /// Compute spectrum, seam, and diversity diagnostics for a saved
    /// canvas.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`, then
    /// `runs/generate`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's merge mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    /// Overrides the snapshot stride; 0 disables snapshots.
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Seconds-scale profile: 4x16x160 canvas, subview 40, 50 steps.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Swept parameter: r_guide, w, overlap_rate, or mode. Falls back to
    /// the config's [sweep] section when omitted.
    #[arg(long)]
    pub parameter: Option<String>,
    /// Comma-separated grid values, e.g. `0.0,0.2,0.4` or `md,safa`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base mode for non-mode sweeps.
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub fast: bool,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Harness self-test: scales the bound before violations are counted;
    /// values well below 1 must trip exit code 3.
    #[arg(long, default_value_t = 1.0)]
    pub debug_bound_scale: f64,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Canvas file in the binary tensor format.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Layout the canvas was generated with.
    #[arg(long, default_value_t = 80)]
    pub subview_width: usize,
    #[arg(long, default_value_t = 0.2)]
    pub overlap_rate: f64,
    #[arg(long)]
    pub circular: bool,
    #[arg(long, default_value_t = 16)]
    pub bins: usize,
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return 1;
            }
            print!("{e}");
            return 0;
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("cannot size worker pool: {e}");
            return 1;
        }
    }
    let result = match &cli.command {
        Command::Generate(args) => commands::cmd_generate(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::ValidateBounds(args) => commands::cmd_validate_bounds(args),
        Command::Analyze(args) => commands::cmd_analyze(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run());
}
