//! `mgalign`: align embedding graphs, check the distance axioms, train the
//! demo encoders and benchmark barycenter against pairwise alignment.
//!
//! Exit codes: 0 success, 2 input error, 3 solver error, 4 verification
//! failure. `MGALIGN_THREADS` caps the worker pool.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgalign::{HeuristicConfig, Metric, Solver, DEFAULT_K};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self { code: EXIT_SOLVER, message: message.into() }
    }

    /// Serialization of our own types; treated as a solver-side fault.
    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::solver(e.to_string())
    }
}

impl From<mgalign::Error> for Failure {
    fn from(e: mgalign::Error) -> Self {
        use mgalign::Error as E;
        let input = e.is_input_error()
            || matches!(
                e,
                E::InvalidK { .. }
                    | E::InvalidParameter(_)
                    | E::InvalidScale(_)
                    | E::SizeMismatch { .. }
                    | E::Generation(_)
            );
        Self { code: if input { EXIT_INPUT } else { EXIT_SOLVER }, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "mgalign", version, about = "Multi-graph alignment engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align two embedding files.
    Align(AlignArgs),
    /// Align the three modalities of a JSON-lines triplet file.
    MultiAlign(MultiAlignArgs),
    /// Check metric axioms and geodesic constant speed on random instances.
    Verify(VerifyArgs),
    /// Train the demo encoders and write a checkpoint plus loss trace.
    Train(TrainArgs),
    /// Time barycenter against pairwise alignment over a (K, B) grid.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::Euclidean => Metric::Euclidean,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SolverArg {
    Exact,
    Heuristic,
}

#[derive(Args, Clone, Debug)]
pub struct SolverOpts {
    #[arg(long, value_enum, default_value_t = SolverArg::Heuristic)]
    pub solver: SolverArg,
    /// Random restarts of the heuristic solver.
    #[arg(long, default_value_t = HeuristicConfig::default().restarts)]
    pub restarts: usize,
}

impl SolverOpts {
    pub fn build(&self, seed: u64) -> Solver {
        match self.solver {
            SolverArg::Exact => Solver::Exact,
            SolverArg::Heuristic => {
                Solver::Heuristic(HeuristicConfig { restarts: self.restarts, seed, ..Default::default() })
            }
        }
    }
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    pub left: PathBuf,
    pub right: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K, value_parser = positive)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Barycenter,
    Pairwise,
}

#[derive(Args, Debug)]
pub struct MultiAlignArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Barycenter)]
    pub mode: Mode,
    #[arg(long, default_value_t = DEFAULT_K, value_parser = positive)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Nodes per random graph.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Geodesic trials; defaults to `--trials`.
    #[arg(long)]
    pub geodesic_trials: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Harness self-test: verify a deliberately asymmetric distance.
    #[arg(long, hide = true)]
    pub mutant: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON-lines triplets to train on; a synthetic task is generated otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Resume from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 8)]
    pub d_raw: usize,
    /// Encoder output (and synthetic latent) dimension.
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 3.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Held-out synthetic batches scored after training.
    #[arg(long, default_value_t = 5)]
    pub holdout: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub surrogate_weight: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_K, value_parser = positive)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub solver: SolverOpts,
    /// Start from random encoders scoring below 0.5 instead of plain random ones.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub adversarial: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the trace goes to `<out>.trace.csv` unless `--trace` is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 4, 5, 6])]
    pub modalities: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 32, 64])]
    pub batches: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = DEFAULT_K, value_parser = positive)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scaling CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got '{s}'")),
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("MGALIGN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("MGALIGN_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Failure::internal)
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Align(a) => commands::align(a),
        Command::MultiAlign(a) => commands::multi_align(a),
        Command::Verify(a) => commands::verify(a),
        Command::Train(a) => commands::train(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mgalign: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
