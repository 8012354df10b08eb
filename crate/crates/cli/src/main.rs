use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use cocoa::{Loss, PartitionStrategy, SolverKind};

mod commands;
mod setup;

#[derive(Parser, Debug)]
#[command(name = "cocoa", version, about = "Distributed primal-dual optimization for regularized ERM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write per-round metrics.
    Train(TrainArgs),
    /// One training run per local iteration budget H.
    SweepH(SweepHArgs),
    /// One training run per subproblem parameter sigma'.
    SweepSigma(SweepSigmaArgs),
    /// Print the iteration-complexity bounds.
    Rates(RatesArgs),
    /// Run the randomized property suite.
    Verify(VerifyArgs),
    /// Split a dataset into per-machine LIBSVM files `<base>.part<k>`.
    Shard(ShardArgs),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NuArg {
    Add,
    Avg,
    Value(f64),
}

impl FromStr for NuArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "add" | "adding" => Ok(NuArg::Add),
            "avg" | "averaging" => Ok(NuArg::Avg),
            _ => {
                let nu: f64 = s.parse().map_err(|_| format!("expected add, avg or a number, got {s:?}"))?;
                if nu > 0.0 && nu <= 1.0 {
                    Ok(NuArg::Value(nu))
                } else {
                    Err(format!("nu must lie in (0, 1], got {nu}"))
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaArg {
    Auto,
    Value(f64),
}

impl FromStr for SigmaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(SigmaArg::Auto);
        }
        let v: f64 = s.parse().map_err(|_| format!("expected auto or a number, got {s:?}"))?;
        if v > 0.0 && v.is_finite() {
            Ok(SigmaArg::Value(v))
        } else {
            Err(format!("sigma' must be positive, got {v}"))
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// LIBSVM file with the full dataset (or one shard in worker mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Base name of pre-split shard files `<base>.part<k>`.
    #[arg(long, conflicts_with = "data")]
    pub shards: Option<String>,
    #[arg(long, default_value = "quadratic")]
    pub loss: Loss,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Number of machines K.
    #[arg(long, default_value_t = 4)]
    pub machines: usize,
    #[arg(long, default_value = "random")]
    pub partition: PartitionStrategy,
    /// Seed of the random partition; defaults to --seed.
    #[arg(long)]
    pub partition_seed: Option<u64>,
    /// Feature dimension, when larger than the largest index in the data.
    #[arg(long)]
    pub features: Option<usize>,
    /// Scale every example to unit norm.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Aggregation parameter: a number in (0, 1], `add` (nu = 1, sigma' = K)
    /// or `avg` (nu = 1/K, sigma' = 1).
    #[arg(long, default_value = "add")]
    pub nu: NuArg,
    /// Subproblem parameter; `auto` is nu K.
    #[arg(long, default_value = "auto")]
    pub sigma_prime: SigmaArg,
    #[arg(long, default_value = "cd")]
    pub solver: SolverKind,
    /// Local iterations H per round; defaults to the largest shard size.
    #[arg(long)]
    pub local_iters: Option<usize>,
    /// L-BFGS memory.
    #[arg(long)]
    pub memory: Option<usize>,
    /// First trial step of the line-search solvers.
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    /// Stop once the duality gap is at most this value (0 never stops).
    #[arg(long, default_value_t = 0.0)]
    pub gap_tol: f64,
    /// Evaluate the gap every this many rounds.
    #[arg(long, default_value_t = 1)]
    pub gap_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write zeros instead of wall-clock times, for byte-identical metrics.
    #[arg(long)]
    pub no_wallclock: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Transport {
    Inproc,
    Tcp,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "inproc")]
    pub transport: Transport,
    /// Coordinator address to listen on (tcp transport).
    #[arg(long, conflicts_with = "connect")]
    pub listen: Option<String>,
    /// Coordinator address to connect to; runs this process as a worker.
    #[arg(long)]
    pub connect: Option<String>,
    #[arg(long)]
    pub machine_id: Option<usize>,
    /// Seconds a worker keeps retrying to reach the coordinator.
    #[arg(long, default_value_t = 30)]
    pub connect_timeout: u64,
    /// Metrics CSV output.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepHArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated local iteration budgets.
    #[arg(long = "h-values", value_delimiter = ',', num_args = 0..)]
    pub h_values: Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub target_gap: f64,
    /// Directory for the per-run metrics files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepSigmaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated sigma' values.
    #[arg(long = "sigma-values", value_delimiter = ',', num_args = 0..)]
    pub sigma_values: Vec<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub target_gap: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct RatesArgs {
    /// Takes gamma and L from the loss unless given explicitly.
    #[arg(long)]
    pub loss: Option<Loss>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub machines: usize,
    #[arg(long, default_value = "add")]
    pub nu: NuArg,
    #[arg(long, default_value = "auto")]
    pub sigma_prime: SigmaArg,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// `sum_k sigma_k |P_k|`
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_dual: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_gap: f64,
    /// Upper bound on D(alpha*) - D(alpha^0).
    #[arg(long, default_value_t = 1.0)]
    pub initial_dual_subopt: f64,
    /// Compute n, sigma_max and sigma from a dataset partitioned over --machines.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "random")]
    pub partition: PartitionStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Random (alpha, h) pairs per trial for the lower-bound check.
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    /// Negative control: check the lower bound at this multiple of sigma'_min.
    #[arg(long)]
    pub sigma_prime_scale: Option<f64>,
    /// Directory for counterexample dumps.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ShardArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub machines: usize,
    #[arg(long, default_value = "random")]
    pub partition: PartitionStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output base name; files are `<out>.part<k>`.
    #[arg(long)]
    pub out: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::SweepH(a) if a.h_values.is_empty() => {
            Cli::command().error(ErrorKind::TooFewValues, "--h-values needs at least one value").exit()
        }
        Command::SweepSigma(a) if a.sigma_values.is_empty() => {
            Cli::command().error(ErrorKind::TooFewValues, "--sigma-values needs at least one value").exit()
        }
        _ => {}
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::SweepH(a) => commands::sweep_h(a),
        Command::SweepSigma(a) => commands::sweep_sigma(a),
        Command::Rates(a) => commands::rates(a),
        Command::Verify(a) => commands::verify(a),
        Command::Shard(a) => commands::shard(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
