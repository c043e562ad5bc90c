//! Command-line surface. Every flag can also be set through an
//! `IDCSBM_`-prefixed environment variable.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use idcsbm::ModelKind;

#[derive(Debug, Parser)]
#[command(
    name = "idcsbm",
    about = "Infinite degree-corrected stochastic blockmodel: generation, fitting, link prediction, and replication tables",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample synthetic benchmark networks (full grid or a single
    /// configuration) with their planted truth.
    Generate(GenerateArgs),
    /// Fit restart chains to a network and write traces, snapshots, and a
    /// summary.
    Fit(FitArgs),
    /// Hold out links, fit with imputation, and score link prediction
    /// (plus NMI and group-count ratio when a truth file is supplied).
    Evaluate(EvaluateArgs),
    /// Emit the CSV tables behind the synthetic and real-network figures.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Dc,
    Plain,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::Dc => ModelKind::DegreeCorrected,
            ModelArg::Plain => ModelKind::Plain,
        }
    }
}

/// Options shared by every fitting command.
#[derive(Debug, Args, Serialize, Clone)]
pub struct ChainOpts {
    /// Model variant: degree-corrected (dc) or plain.
    #[arg(long, value_enum, default_value = "dc", env = "IDCSBM_MODEL")]
    pub model: ModelArg,

    /// Gibbs sweeps per chain.
    #[arg(long, default_value_t = 1000, env = "IDCSBM_ITERATIONS")]
    pub iterations: usize,

    /// Iterations discarded as burn-in.
    #[arg(long, default_value_t = 500, env = "IDCSBM_BURNIN")]
    pub burnin: usize,

    /// Independent restart chains.
    #[arg(long, default_value_t = 10, env = "IDCSBM_RESTARTS")]
    pub restarts: usize,

    /// Metropolis rounds over the hyperparameters per sweep.
    #[arg(long, default_value_t = 20, env = "IDCSBM_MH_UPDATES")]
    pub mh_updates: usize,

    /// Log-space standard deviation of the Metropolis proposals.
    #[arg(long, default_value_t = 0.1, env = "IDCSBM_MH_SIGMA")]
    pub mh_sigma: f64,

    /// Fix a hyperparameter (repeatable), e.g. --fix gamma=1e8; fixed
    /// parameters start at the given value and skip Metropolis updates.
    #[arg(long = "fix", value_name = "PARAM=VALUE", env = "IDCSBM_FIX")]
    pub fix: Vec<String>,

    /// Treat the network as a simple graph: impute every diagonal entry
    /// instead of reading it as zero.
    #[arg(long, env = "IDCSBM_SIMPLE")]
    pub simple: bool,

    /// Partition snapshot stride (default: every iteration up to 2000
    /// nodes, every 10th above).
    #[arg(long, env = "IDCSBM_SNAPSHOT_STRIDE")]
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct RunOpts {
    /// Master seed; generated and logged when omitted.
    #[arg(long, env = "IDCSBM_SEED")]
    pub seed: Option<u64>,

    /// Worker threads for chain-level parallelism (0 = all cores).
    #[arg(long, default_value_t = 0, env = "IDCSBM_THREADS")]
    pub threads: usize,

    /// Output directory.
    #[arg(long, default_value = "out", env = "IDCSBM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Nodes per network.
    #[arg(long, default_value_t = 80, env = "IDCSBM_N")]
    pub n: usize,

    /// Density knob of one configuration: the scale of the block-rate prior
    /// (the model's rate parameter is its reciprocal). Requires --gamma;
    /// omit both for the full grid.
    #[arg(long, requires = "gamma", env = "IDCSBM_LAMBDA")]
    pub lambda: Option<f64>,

    /// Planted degree-correction concentration of one configuration.
    #[arg(long, requires = "lambda", env = "IDCSBM_GAMMA")]
    pub gamma: Option<f64>,

    /// Override the grid's lambda values (comma-separated).
    #[arg(long, value_delimiter = ',', env = "IDCSBM_LAMBDAS")]
    pub lambdas: Option<Vec<f64>>,

    /// Override the grid's gamma values (comma-separated).
    #[arg(long, value_delimiter = ',', env = "IDCSBM_GAMMAS")]
    pub gammas: Option<Vec<f64>>,

    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Edge-list file to fit.
    #[arg(long, env = "IDCSBM_INPUT")]
    pub input: PathBuf,

    #[command(flatten)]
    pub chain: ChainOpts,

    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Edge-list file to evaluate.
    #[arg(long, env = "IDCSBM_INPUT")]
    pub input: PathBuf,

    /// Planted-truth JSON (enables NMI and the group-count ratio).
    #[arg(long, env = "IDCSBM_TRUTH")]
    pub truth: Option<PathBuf>,

    /// Fraction of links (and matched non-links) held out.
    #[arg(long, default_value_t = 0.05, env = "IDCSBM_HOLDOUT")]
    pub holdout: f64,

    #[command(flatten)]
    pub chain: ChainOpts,

    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// Directory of user-supplied edge lists; when given, emits the
    /// real-network tables instead of the synthetic ones.
    #[arg(long, env = "IDCSBM_INPUT_DIR")]
    pub input_dir: Option<PathBuf>,

    /// Use 50 chains per configuration instead of 10.
    #[arg(long, env = "IDCSBM_FULL")]
    pub full: bool,

    /// Restrict the synthetic grid's lambda values (comma-separated).
    #[arg(long, value_delimiter = ',', env = "IDCSBM_LAMBDAS")]
    pub lambdas: Option<Vec<f64>>,

    /// Restrict the synthetic grid's gamma values (comma-separated).
    #[arg(long, value_delimiter = ',', env = "IDCSBM_GAMMAS")]
    pub gammas: Option<Vec<f64>>,

    /// Fraction of links held out for the AUC column.
    #[arg(long, default_value_t = 0.05, env = "IDCSBM_HOLDOUT")]
    pub holdout: f64,

    /// Pool the dispersion profile's group sizes into power-of-two bins
    /// instead of exact sizes.
    #[arg(long, env = "IDCSBM_LOG_BINS")]
    pub log_bins: bool,

    #[command(flatten)]
    pub chain: ChainOpts,

    #[command(flatten)]
    pub run: RunOpts,
}
