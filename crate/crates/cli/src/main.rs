mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<pibp_core::Error> for CliError {
    fn from(e: pibp_core::Error) -> Self {
        match e {
            pibp_core::Error::Config(m) => CliError::Usage(m),
            e if e.is_data_error() => CliError::Data(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "pibp", version, about = "Binary latent factor models with Indian buffet and tree-structured priors")]
struct Cli {
    /// TOML file supplying defaults for any flag (keys use snake_case flag names).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random quantity of the run.
    #[arg(long, global = true, env = "PIBP_SEED")]
    seed: Option<u64>,
    /// Directory for output files and the run manifest.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a truth matrix and data from one of the simulation designs.
    Simulate(SimulateArgs),
    /// Build a Newick tree by clustering rows, or from a group partition.
    BuildTree(BuildTreeArgs),
    /// Run the sampler on a data matrix.
    Fit(FitArgs),
    /// Run replicated simulation studies.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScenario {
    Sim1,
    Sim2,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: Option<SimScenario>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Loading variance of the generating model.
    #[arg(long)]
    sigma_a_sq: Option<f64>,
    /// Noise variance of the generating model.
    #[arg(long)]
    sigma_x_sq: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Complete,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Hamming,
    Euclidean,
}

#[derive(Args)]
pub struct BuildTreeArgs {
    /// CSV matrix whose rows are clustered.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    linkage: Option<Linkage>,
    /// Defaults to hamming for 0/1 input and euclidean otherwise.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Build a group tree with this group-edge length from --partition instead of clustering.
    #[arg(long)]
    two_group: Option<f64>,
    /// One integer group label per line.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Shuffle the samples with this seed before building, giving an uninformative tree.
    #[arg(long)]
    permute: Option<u64>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Data matrix (CSV, samples in rows).
    #[arg(long)]
    x: Option<PathBuf>,
    /// Newick tree over the samples; the flat tree (IBP) when absent.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Rescale a tree whose leaves are not all at depth one.
    #[arg(long)]
    normalize_depth: bool,
    /// Truth matrix for reporting the similarity error of the MAP sample.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Independent chains run in parallel; the MAP sample is taken across all of them.
    #[arg(long)]
    chains: Option<usize>,
    /// Keep exactly this many feature columns instead of the unbounded model.
    #[arg(long)]
    truncate: Option<usize>,
    /// Pin α instead of sampling it.
    #[arg(long)]
    alpha: Option<f64>,
    /// Pin the loading variance (requires --fixed-sigma-x-sq).
    #[arg(long)]
    fixed_sigma_a_sq: Option<f64>,
    /// Pin the noise variance (requires --fixed-sigma-a-sq).
    #[arg(long)]
    fixed_sigma_x_sq: Option<f64>,
    /// Minimum column sum for a feature to count in K̂.
    #[arg(long)]
    min_share: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentScenario {
    Table1,
    Table2,
    Scaling,
    PriorMass,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    scenario: Option<ExperimentScenario>,
    /// (n,p) pairs, e.g. "(192,30),(192,200)".
    #[arg(long)]
    rows: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Comma-separated subset of ibp,pibp,mispibp.
    #[arg(long)]
    priors: Option<String>,
    /// Group-edge length for pibp.
    #[arg(long)]
    eta: Option<f64>,
    /// Group-edge length for mispibp.
    #[arg(long)]
    mis_eta: Option<f64>,
    /// Sample count for the scaling and prior-mass studies.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated values of p for the scaling study.
    #[arg(long)]
    p_grid: Option<String>,
    /// Prior draws per cell of the prior-mass study.
    #[arg(long)]
    draws: Option<u64>,
    /// Comma-separated η grid for the prior-mass study.
    #[arg(long)]
    etas: Option<String>,
    /// Fixed α for the prior-mass study.
    #[arg(long)]
    alpha: Option<f64>,
    /// Draw α from its Gamma(1, 1) hyperprior in the prior-mass study.
    #[arg(long)]
    alpha_hyperprior: bool,
    #[arg(long)]
    min_share: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pibp: {e}");
            ExitCode::from(e.code())
        }
    }
}
