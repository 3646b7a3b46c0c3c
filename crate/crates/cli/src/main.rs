mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ordcausal::simulator::{ScenarioConfig, DEFAULT_TARGET_LOG_OR};

/// Exit status 1: the request or its inputs are invalid.
/// Exit status 2: the computation failed.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

pub fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

#[derive(Parser)]
#[command(
    name = "ordcausal",
    version,
    about = "Marginal causal odds ratios for ordinal outcomes observed at covariate-driven visits",
    after_help = "Set ORDCAUSAL_THREADS to cap the number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated simulation study of the four estimators.
    Simulate(SimulateArgs),
    /// Monte Carlo target log odds ratio of the simulation model.
    Target(TargetArgs),
    /// Estimate marginal odds ratios on a panel CSV.
    Estimate(EstimateArgs),
    /// Combine study summaries into comparison tables.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one scenario key, e.g. `--set gamma_d=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target log odds ratio (higher-category direction) for bias and MSE.
    #[arg(long, default_value_t = DEFAULT_TARGET_LOG_OR, allow_hyphen_values = true)]
    pub target: f64,
    /// `continuous` or `binned`.
    #[arg(long)]
    pub ipt: Option<String>,
    /// Bins for binned IPT: `quantiles:N`, `edges:a,b,...` or `zero-one-tertiles`.
    #[arg(long)]
    pub bins: Option<String>,
    /// Also write the dataset of this replicate as CSV.
    #[arg(long, value_name = "REPLICATE")]
    pub export_dataset: Option<usize>,
    #[arg(long, default_value = "ordcausal-out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TargetArgs {
    /// Subjects per replicate.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 20_240_601)]
    pub seed: u64,
    /// Directory for `target.json` and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EstimateArgs {
    /// Panel CSV, one row per subject and time.
    #[arg(long)]
    pub data: PathBuf,
    /// Roles file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one roles key, e.g. `--set confounders=k1,k2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Comma-separated subset of POM, IPTP, IIVP, IPTMP.
    #[arg(long, default_value = "POM,IPTP,IIVP,IPTMP")]
    pub estimators: String,
    #[arg(long)]
    pub ipt: Option<String>,
    #[arg(long)]
    pub bins: Option<String>,
    /// Replace the exposure by `log2(exposure + 1)` before fitting.
    #[arg(long)]
    pub log2_exposure: bool,
    /// Cluster bootstrap replicates for percentile intervals.
    #[arg(long, value_name = "B")]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Exposure increments for the odds ratio table.
    #[arg(long, default_value = "1")]
    pub or_units: String,
    /// Grid size of the probability curves.
    #[arg(long, default_value_t = 101)]
    pub curve_points: usize,
    #[arg(long, default_value = "ordcausal-out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Summary JSON files or study output directories.
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "ordcausal-report")]
    pub out: PathBuf,
}

fn scenario_help() -> String {
    let mut text = String::from("Scenario keys and defaults:\n");
    for line in ScenarioConfig::default().to_kv_string().lines() {
        text.push_str("  ");
        text.push_str(line);
        text.push('\n');
    }
    text
}

fn set_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("ORDCAUSAL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_err(anyhow::anyhow!("ORDCAUSAL_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(runtime_err)
}

fn run() -> Result<(), Failure> {
    let command = Cli::command().mut_subcommand("simulate", |c| c.after_long_help(scenario_help()));
    let matches = match command.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(config_err)?;
    set_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Target(a) => commands::target(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
