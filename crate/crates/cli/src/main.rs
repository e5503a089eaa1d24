mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fermipca::Error;

#[derive(Parser, Debug)]
#[command(name = "fermipca", version, about = "Soft PCA via thermal measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a covariance model from a feature dataset.
    Build(BuildArgs),
    /// Sample count sufficient for a calibration task.
    Plan(PlanArgs),
    /// Calibrate thresholds from simulated measurement outcomes.
    Calibrate(CalibrateArgs),
    /// Score test inputs against calibrated thresholds.
    Score(ScoreArgs),
    /// Resolve inputs into soft spectral bins of a full rank ladder.
    Profile(ProfileArgs),
    /// Tabulate the position density of a probe.
    Density(DensityArgs),
    /// Trotter error of the round decomposition versus round count.
    TrotterCheck(TrotterArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Dataset in CSV (`re_j,im_j` or real columns) or JSON (`{"vectors": ...}`).
    #[arg(long)]
    pub input: PathBuf,
    /// Mean-subtracted covariance (default).
    #[arg(long, conflicts_with = "uncentered")]
    pub centered: bool,
    /// Second-moment matrix without mean subtraction.
    #[arg(long)]
    pub uncentered: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanTask {
    AllRank,
    FixedRank,
    Fractional,
    VarianceProfile,
    FixedVariance,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long, value_enum)]
    pub task: PlanTask,
    /// Feature dimension; taken from --model when omitted.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub eta: f64,
    #[arg(long = "delta-fail")]
    pub delta_fail: f64,
    /// Rank level for fixed-rank.
    #[arg(long)]
    pub k: Option<usize>,
    /// Variance level for fixed-variance.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long = "t-prime")]
    pub t_prime: Option<f64>,
    /// Width of the multiplier interval searched by fixed-variance bisection;
    /// defaults to 2/lambda_max of --model.
    #[arg(long)]
    pub interval: Option<f64>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibrationMode {
    Rank,
    Variance,
    FixedVariance,
}

#[derive(Args, Debug)]
pub struct SamplingArgs {
    /// Number of measurement shots.
    #[arg(long, conflicts_with_all = ["eta", "delta_fail"])]
    pub samples: Option<usize>,
    /// Accuracy target; the shot count then comes from the planner.
    #[arg(long, requires = "delta_fail")]
    pub eta: Option<f64>,
    #[arg(long = "delta-fail", requires = "eta")]
    pub delta_fail: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub mode: CalibrationMode,
    #[arg(long, default_value_t = 0.05)]
    pub t1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t2: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub delta: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Population thresholds from the model instead of sampling.
    #[arg(long)]
    pub exact: bool,
    /// Rank levels, comma separated; default 1..d-1.
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Variance levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.8, 0.9, 0.95])]
    pub thetas: Vec<f64>,
    /// Normalized retained-variance target for fixed-variance.
    #[arg(long, conflicts_with = "gamma")]
    pub theta: Option<f64>,
    /// Unnormalized retained-variance target for fixed-variance.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Entropy scale for fixed-variance.
    #[arg(long = "t-prime", default_value_t = 0.05)]
    pub t_prime: f64,
    /// Bisection steps for fixed-variance; planned from --eta when omitted.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Position-density CSV of the calibration probe.
    #[arg(long = "density-csv")]
    pub density_csv: Option<PathBuf>,
    /// Raw samples (little-endian f64 with a JSON sidecar).
    #[arg(long = "samples-out")]
    pub samples_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DeployArgs {
    /// Deployed width; defaults to the calibrated one.
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub t2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    /// 0 for exact scores; otherwise Monte Carlo shots per input and threshold.
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub deploy: DeployArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rank thresholds covering k = 1..d-1.
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    #[command(flatten)]
    pub deploy: DeployArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeChoice {
    Mixed,
    Covariance,
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = ProbeChoice::Covariance)]
    pub probe: ProbeChoice,
    #[arg(long, default_value_t = 0.05)]
    pub t1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t2: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrotterArgs {
    /// Model built with its mean (centered build).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t2: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32, 64, 128, 256, 512, 1024])]
    pub rounds: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NoConvergence { .. }
        | Error::BracketExpansion(_)
        | Error::NonMonotone(_)
        | Error::EmptyBranch(_)
        | Error::Infeasible(_)
        | Error::DegenerateInput => 3,
        _ => 2,
    }
}

fn init_threads() -> fermipca::Result<()> {
    let Ok(value) = std::env::var("FERMIPCA_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Invalid(format!("FERMIPCA_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Build(a) => commands::build(&a),
        Command::Plan(a) => commands::plan(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Score(a) => commands::score(&a),
        Command::Profile(a) => commands::profile(&a),
        Command::Density(a) => commands::density(&a),
        Command::TrotterCheck(a) => commands::trotter_check(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
