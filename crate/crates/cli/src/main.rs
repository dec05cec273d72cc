//! `screening`: run manipulation and defense experiments from scenario files.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use screening_core::Mode;

#[derive(Parser, Debug)]
#[command(name = "screening", version, about = "Strategic manipulation against screening pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Respond,
    Region,
    Defend,
    Evaluate,
    Gap,
    Audit,
    Verify,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Best-response plan for every agent
    Respond(Options),
    /// Raster of best-response costs and regions over the plane (k = 2, d = 2)
    Region(Options),
    /// Thresholds of the conservatively shifted pipeline
    Defend(Options),
    /// True/false positive rates of the defended pipeline in both settings
    Evaluate(Options),
    /// Conjunction versus sequential cost over a gamma or theta sweep
    Gap(Options),
    /// Search a grid for unqualified agents that pass the defended pipeline (d = 2)
    Audit(Options),
    /// Compare closed form, convex solver and grid oracle on every agent
    Verify(Options),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sequential,
    Conjunction,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::Conjunction => Mode::Conjunction,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Options {
    /// Scenario file (JSON)
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,

    /// Scenario file, as a positional alternative to --scenario
    #[arg(value_name = "SCENARIO", conflicts_with = "scenario")]
    pub scenario_positional: Option<PathBuf>,

    /// Output file; CSV tables also get a `<out>.meta.json` sidecar
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,

    /// Manipulation budget, overrides the scenario
    #[arg(long)]
    pub tau: Option<f64>,

    /// Solver tolerance
    #[arg(long)]
    pub tol: Option<f64>,

    /// Grid resolution for rasters, audits and the oracle
    #[arg(long = "grid-res")]
    pub grid_res: Option<f64>,

    /// Seed for sampled populations, overrides the scenario
    #[arg(long)]
    pub seed: Option<u64>,

    /// Screening mode, overrides the scenario
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    /// Threshold shift of the defense (default: the budget); audit and evaluate only
    #[arg(long)]
    pub shift: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, options) = match cli.command {
        Command::Respond(o) => (CommandKind::Respond, o),
        Command::Region(o) => (CommandKind::Region, o),
        Command::Defend(o) => (CommandKind::Defend, o),
        Command::Evaluate(o) => (CommandKind::Evaluate, o),
        Command::Gap(o) => (CommandKind::Gap, o),
        Command::Audit(o) => (CommandKind::Audit, o),
        Command::Verify(o) => (CommandKind::Verify, o),
    };
    match commands::run(kind, &options) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("screening {}: {e}", kind.name());
            ExitCode::from(e.exit_code())
        }
    }
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Respond => "respond",
            CommandKind::Region => "region",
            CommandKind::Defend => "defend",
            CommandKind::Evaluate => "evaluate",
            CommandKind::Gap => "gap",
            CommandKind::Audit => "audit",
            CommandKind::Verify => "verify",
        }
    }
}
