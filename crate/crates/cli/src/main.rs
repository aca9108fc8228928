use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shape_synth::evaluate::MissingPolicy;
use shape_synth::{ErrorClass, Scale};

mod commands;

/// Spatial microsimulation of small-area health estimates.
#[derive(Debug, Parser)]
#[command(name = "shape-synth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a stratified or single-region sample from a survey.
    Sample(SampleArgs),
    /// Run both fitting levels from a pipeline config.
    Run(RunArgs),
    /// Score estimates against reference estimates.
    Evaluate(EvaluateArgs),
    /// Composite scores, rankings and reliability tiers.
    Rank(RankArgs),
    /// Write a synthetic mini-state with known ground truth.
    MakeFixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SampleMode {
    Stratified,
    Region,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    survey: PathBuf,
    #[arg(long)]
    recode: PathBuf,
    #[arg(long, value_enum, default_value = "stratified")]
    mode: SampleMode,
    /// Records to draw (stratified mode).
    #[arg(long)]
    target_n: Option<usize>,
    /// Comma-separated stratification variables (stratified mode).
    #[arg(long, value_delimiter = ',', default_value = "age,sex,race")]
    strata: Vec<String>,
    /// Retained column holding the region (region mode).
    #[arg(long, default_value = "state")]
    region_column: String,
    /// Region value to keep (region mode).
    #[arg(long)]
    region: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    County,
    Tract,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::County => Scale::County,
            ScaleArg::Tract => Scale::Tract,
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// `model,region,zone_id,outcome,estimate`, or a prevalence table written
    /// by `run` together with --model and --region.
    #[arg(long, required = true, num_args = 1..)]
    estimates: Vec<PathBuf>,
    /// `region,zone_id,outcome,estimate[,ci_low,ci_high]`.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MissingArg {
    Error,
    Skip,
}

impl From<MissingArg> for MissingPolicy {
    fn from(m: MissingArg) -> Self {
        match m {
            MissingArg::Error => MissingPolicy::Error,
            MissingArg::Skip => MissingPolicy::Skip,
        }
    }
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Metric records (as written by `evaluate`) or a deviation grid
    /// (`model,region,outcome,r_dev,mae_dev,ci_dev`).
    #[arg(long)]
    input: PathBuf,
    /// Reliable-tier cut-off.
    #[arg(long, conflicts_with = "threshold_model")]
    threshold: Option<f64>,
    /// Take the reliable cut-off from this model's lowest positive score.
    #[arg(long)]
    threshold_model: Option<String>,
    /// Moderate-tier cut-off; defaults to the mean composite score.
    #[arg(long)]
    moderate: Option<f64>,
    /// Fixed grid means `r,mae,ci` instead of recomputing them.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    means: Option<Vec<f64>>,
    /// Fixed MAE pool extremes `min,max`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    mae_range: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "error")]
    missing: MissingArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    counties: usize,
    #[arg(long, default_value_t = 200)]
    survey_size: usize,
    #[arg(long, default_value = "MS")]
    state: String,
}

fn exit_code(class: ErrorClass) -> ExitCode {
    match class {
        ErrorClass::Schema => ExitCode::from(2),
        ErrorClass::Data => ExitCode::from(3),
        ErrorClass::Internal => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::Run(a) => commands::run(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Rank(a) => commands::rank(a),
        Command::MakeFixture(a) => commands::make_fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shape-synth: {e}");
            exit_code(e.class())
        }
    }
}
