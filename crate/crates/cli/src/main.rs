//! `excursion`: causal excursion effect analysis and simulation studies.
//!
//! Exit codes: 0 on success, 1 when estimation fails, 2 for input errors.

mod analyze;
mod settings;
mod simulate;

use clap::{Args, Parser, Subcommand};
use excursion_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "excursion", version, about = "Causal excursion effects for zero-inflated count outcomes")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate excursion effects from a panel CSV.
    Analyze(AnalyzeArgs),
    /// Run a replication study on a synthetic scenario.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// key = value config file, or an earlier output file with an embedded config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub participant_col: Option<String>,
    #[arg(long)]
    pub t_col: Option<String>,
    #[arg(long)]
    pub availability_col: Option<String>,
    #[arg(long)]
    pub arm_col: Option<String>,
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Randomization probability column, one per active arm.
    #[arg(long = "prob-col")]
    pub prob_cols: Vec<String>,
    #[arg(long)]
    pub arms: Option<usize>,
    /// Estimator name; repeat to fit several on the same data.
    #[arg(short, long = "estimator")]
    pub estimators: Vec<String>,
    /// marginal or conditional.
    #[arg(long)]
    pub estimand: Option<String>,
    #[arg(short, long = "moderator")]
    pub moderators: Vec<String>,
    #[arg(short, long = "control")]
    pub controls: Vec<String>,
    /// sample-proportion or comma-separated constants.
    #[arg(long)]
    pub reference: Option<String>,
    /// auto, known, sample-proportion, logistic or spline-logistic.
    #[arg(long)]
    pub propensity: Option<String>,
    #[arg(long = "propensity-feature")]
    pub propensity_features: Vec<String>,
    /// Outcome-model history feature, `name` or `name:kind`.
    #[arg(long = "nuisance-term")]
    pub nuisance_terms: Vec<String>,
    /// Reuse a fitted nuisance model instead of refitting.
    #[arg(long)]
    pub nuisance_model: Option<PathBuf>,
    /// record or cluster.
    #[arg(long)]
    pub meat: Option<String>,
    #[arg(long)]
    pub t_critical: bool,
    #[arg(long)]
    pub sample_split: bool,
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(short, long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub scenario: Option<String>,
    #[arg(short, long)]
    pub n: Option<usize>,
    /// Decision points; repeat for one table block per T.
    #[arg(short = 'T', long = "T")]
    pub t: Vec<u32>,
    /// Replicates.
    #[arg(short = 'R', long = "R")]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long = "estimator")]
    pub estimators: Vec<String>,
    #[arg(long)]
    pub estimand: Option<String>,
    #[arg(long)]
    pub dispersion: Option<f64>,
    #[arg(long)]
    pub ts_alpha: Option<f64>,
    #[arg(long)]
    pub propensity: Option<String>,
    #[arg(long = "nuisance-term")]
    pub nuisance_terms: Vec<String>,
    /// Use the generating nuisance functions instead of fitted ones.
    #[arg(long)]
    pub oracle_nuisance: bool,
    #[arg(long)]
    pub meat: Option<String>,
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    #[arg(short, long)]
    pub workers: Option<usize>,
}

/// Error split by exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Estimation(String),
}

impl Failure {
    pub fn input(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        Failure::Input(format!("{context}: {e}"))
    }

    /// Classifies a library error, prefixing `context` (usually a path).
    pub fn from_core(context: &str, e: Error) -> Self {
        let msg = if context.is_empty() { e.to_string() } else { format!("{context}: {e}") };
        if e.is_input_error() {
            Failure::Input(msg)
        } else {
            Failure::Estimation(msg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Analyze(args) => analyze::run(args),
        Command::Simulate(args) => simulate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
