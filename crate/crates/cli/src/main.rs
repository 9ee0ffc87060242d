use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cctkit::case::{BranchRef, DEFAULT_DT, DEFAULT_HORIZON, DEFAULT_T1};
use cctkit::sensitivity::{Alignment, SensitivityMethod};
use cctkit::tds::Integrator;

mod commands;
mod output;

/// Transient stability simulation and critical clearing time estimation.
#[derive(Debug, Parser)]
#[command(name = "cctkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one fault (or none) and classify the outcome.
    Simulate(SimulateArgs),
    /// Trajectory sensitivity to the clearing time and the fleet norms.
    Sensitivity(SensitivityArgs),
    /// Estimate the critical clearing time from two probes.
    Cct(CctArgs),
    /// Bracket the critical clearing time by repeated simulation.
    Bisect(BisectArgs),
    /// Estimate and bracket the CCT for a list of faults.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Self::Json | Self::Both)
    }
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// Built-in case (smib, ieee39_sync, ieee39_gfl2), a case file, or the
    /// name of a file in the case directory.
    #[arg(long)]
    pub case: String,
    /// Directory searched for `<name>` and `<name>.json`.
    #[arg(long, env = "CCTKIT_CASE_DIR")]
    pub case_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    /// Fault inception time (s).
    #[arg(long, default_value_t = DEFAULT_T1)]
    pub t1: f64,
    /// Integration step (s).
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Simulated time span (s).
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: f64,
    #[arg(long, value_parser = parse_integrator, default_value = "trap")]
    pub integrator: Integrator,
    /// Store machine speeds in pu instead of rad/s.
    #[arg(long)]
    pub omega_pu: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub format: Format,
    /// Also write a gnuplot script next to the data.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct FaultArgs {
    /// Faulted bus.
    #[arg(long)]
    pub fault_bus: usize,
    /// Branch tripped to clear the fault, `A-B` or `A-B#circuit`.
    #[arg(long, value_parser = parse_branch)]
    pub trip: BranchRef,
}

#[derive(Debug, Args)]
pub struct SensitivityFlags {
    #[arg(long = "sens", value_parser = parse_method, default_value = "variational")]
    pub method: SensitivityMethod,
    #[arg(long, value_parser = parse_alignment, default_value = "elapsed")]
    pub alignment: Alignment,
    /// Finite-difference half step in multiples of dt.
    #[arg(long, default_value_t = 1)]
    pub fd_steps: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Faulted bus; without it the run is a no-fault run.
    #[arg(long)]
    pub fault_bus: Option<usize>,
    #[arg(long, value_parser = parse_branch)]
    pub trip: Option<BranchRef>,
    /// Fault duration (s).
    #[arg(long, default_value_t = 0.1)]
    pub tcl: f64,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    /// Fault duration (s).
    #[arg(long)]
    pub tcl: f64,
    #[command(flatten)]
    pub sens: SensitivityFlags,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CctArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    /// Probe fault durations `a,b` (s); chosen automatically if omitted.
    #[arg(long, value_parser = parse_pair)]
    pub probes: Option<(f64, f64)>,
    /// Also bisect within `--bracket` and report both.
    #[arg(long)]
    pub compare: bool,
    #[arg(long, value_parser = parse_pair, default_value = "0.05,1.0")]
    pub bracket: (f64, f64),
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[command(flatten)]
    pub sens: SensitivityFlags,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BisectArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    /// Initial bracket `a,b` (s): `a` must be stable and `b` unstable.
    #[arg(long, value_parser = parse_pair, default_value = "0.05,1.0")]
    pub bracket: (f64, f64),
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Faults as `BUS:A-B`, comma separated.
    #[arg(long, value_parser = parse_fault, value_delimiter = ',')]
    pub faults: Vec<(usize, BranchRef)>,
    /// Probes used for every fault; chosen per fault if omitted.
    #[arg(long, value_parser = parse_pair)]
    pub probes: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_pair, default_value = "0.05,1.0")]
    pub bracket: (f64, f64),
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[command(flatten)]
    pub sens: SensitivityFlags,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_branch(s: &str) -> Result<BranchRef, String> {
    s.parse().map_err(|e: cctkit::Error| e.to_string())
}

fn parse_integrator(s: &str) -> Result<Integrator, String> {
    s.parse().map_err(|e: cctkit::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<SensitivityMethod, String> {
    s.parse().map_err(|e: cctkit::Error| e.to_string())
}

fn parse_alignment(s: &str) -> Result<Alignment, String> {
    s.parse().map_err(|e: cctkit::Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_fault(s: &str) -> Result<(usize, BranchRef), String> {
    let (bus, branch) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `BUS:A-B`, got `{s}`"))?;
    let bus = bus.trim().parse().map_err(|e| format!("bus `{bus}`: {e}"))?;
    Ok((bus, parse_branch(branch.trim())?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Sensitivity(a) => commands::sensitivity(&a),
        Command::Cct(a) => commands::cct(&a),
        Command::Bisect(a) => commands::bisect(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
