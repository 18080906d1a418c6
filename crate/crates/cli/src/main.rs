mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use bifuse::pipeline::Formulation;
use bifuse::FusionMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<bifuse::Error> for CliError {
    fn from(e: bifuse::Error) -> Self {
        match e {
            bifuse::Error::Input(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "bifuse", version, about = "Multi-task regression with convex bi-clustering of the coefficients")]
struct Cli {
    /// Worker threads for parallel grid searches.
    #[arg(long, global = true, env = "BIFUSE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a checkerboard problem from a JSON generator config.
    Simulate(SimulateArgs),
    /// Fit one model and extract its clusters.
    Fit(FitArgs),
    /// Sweep a fusion multiplier with warm starts.
    Path(PathArgs),
    /// Tune the multipliers by validation error.
    Cv(CvArgs),
    /// Compare clusters (and optionally coefficients) with the truth.
    Score(ScoreArgs),
    /// Lasso followed by convex bi-clustering of its estimate.
    Baseline2step(BaselineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FormulationArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl From<FormulationArg> for Formulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::One => Formulation::Direct,
            FormulationArg::Two => Formulation::Surrogate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Bicluster,
    ColumnsOnly,
    RowsOnly,
}

impl From<ModeArg> for FusionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bicluster => FusionMode::Bicluster,
            ModeArg::ColumnsOnly => FusionMode::ColumnsOnly,
            ModeArg::RowsOnly => FusionMode::RowsOnly,
        }
    }
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Generator config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a test set of this size (X_test.csv, Y_test.csv).
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Args)]
pub struct DataArgs {
    /// Design matrix, n×p.
    #[arg(long)]
    pub x: PathBuf,
    /// Responses, n×k.
    #[arg(long)]
    pub y: PathBuf,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "1")]
    pub formulation: FormulationArg,
    #[arg(long, default_value_t = 0.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda3: f64,
    /// Gaussian kernel scale of the similarity weights.
    #[arg(long, default_value_t = 20.0)]
    pub phi: f64,
    /// Nearest neighbors per item in the similarity graph.
    #[arg(long, default_value_t = 5)]
    pub kappa: usize,
    /// Proximal-decomposition step, or `auto` for p / (2‖X‖²_F).
    #[arg(long, default_value = "1.0")]
    pub gamma: String,
    #[arg(long, value_enum, default_value = "bicluster")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated, strictly increasing values of λ2 (formulation 1)
    /// or λ3 (formulation 2).
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Candidate λ1 values, comma-separated.
    #[arg(long)]
    pub grid_lambda1: String,
    /// Candidate λ2 values, comma-separated.
    #[arg(long)]
    pub grid_lambda2: String,
    /// Candidate λ3 values (formulation 2), comma-separated.
    #[arg(long, default_value = "")]
    pub grid_lambda3: String,
    /// Number of folds; without it a random hold-out split is used.
    #[arg(long)]
    pub folds: Option<usize>,
    /// External validation design; requires --y-val.
    #[arg(long, requires = "y_val")]
    pub x_val: Option<PathBuf>,
    #[arg(long, requires = "x_val")]
    pub y_val: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file for the chosen hyperparameters and scores.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, requires = "theta_star")]
    pub theta: Option<PathBuf>,
    #[arg(long, requires = "theta")]
    pub theta_star: Option<PathBuf>,
    /// Test design for prediction RMSE; requires --theta and --y-test.
    #[arg(long, requires_all = ["y_test", "theta"])]
    pub x_test: Option<PathBuf>,
    #[arg(long, requires = "x_test")]
    pub y_test: Option<PathBuf>,
    /// Write the scores here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 20.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 5)]
    pub kappa: usize,
    #[arg(long, value_enum, default_value = "bicluster")]
    pub mode: ModeArg,
    /// Candidate bi-clustering multipliers, comma-separated.
    #[arg(long)]
    pub grid: String,
    /// Validation design: choose the multiplier by prediction error on it
    /// instead of by held-out entries.
    #[arg(long, requires = "y_val")]
    pub x_val: Option<PathBuf>,
    #[arg(long, requires = "x_val")]
    pub y_val: Option<PathBuf>,
    /// Fraction of entries held out when tuning without a validation set.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("cannot set up {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Path(a) => commands::path(&a),
        Command::Cv(a) => commands::cv(&a),
        Command::Score(a) => commands::score(&a),
        Command::Baseline2step(a) => commands::baseline(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
