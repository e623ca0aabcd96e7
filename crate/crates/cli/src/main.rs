//! `oc`: train value-function policies, solve baselines, evaluate and benchmark.

mod commands;
mod config;
mod exit;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oc_core::scenarios::ScenarioId;

/// Environment variable that overrides the output directory (the `--out` flag wins).
pub const OUT_DIR_ENV: &str = "OC_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "oc", version, about = "Neural value functions for optimal control")]
struct Cli {
    /// Run everything on one thread (deterministic scheduling, clean timings).
    #[arg(long, global = true)]
    single_thread: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run config, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// corridor, swap2, swap12, swap_k<1..6>, swarm or quadcopter.
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Seeds every random component.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Hidden width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Training iterations (the lr decay schedule rescales with it).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Write a checkpoint every K iterations in addition to the final one.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Keep stderr quiet apart from errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    /// Start state (comma separated); defaults to the scenario's x0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Control intervals over the full horizon.
    #[arg(long)]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Validation steps over the full horizon (default: the checkpoint's).
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Skip the baseline comparison.
    #[arg(long)]
    pub no_baseline: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ShockArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Shock time (snapped to the validation grid).
    #[arg(long)]
    pub time: f64,
    /// Explicit displacement (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "norm")]
    pub displacement: Option<Vec<f64>>,
    /// Random direction with this norm.
    #[arg(long)]
    pub norm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub direction_seed: u64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Sweep {
    /// Policy vs baseline over random starts on spheres around x0.
    Hypersphere(HypersphereArgs),
    /// Smallest adequate width as the number of agents grows.
    Cod(CodArgs),
}

#[derive(Args, Debug, Clone)]
pub struct HypersphereArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub magnitudes: Option<Vec<f64>>,
    /// Samples per magnitude.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct CodArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub pairs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,48,64")]
    pub widths: Vec<usize>,
    /// Largest accepted suboptimality at x0.
    #[arg(long, default_value_t = 0.1)]
    pub budget: f64,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Rollout steps (default: the checkpoint's validation steps).
    #[arg(long)]
    pub n_t: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Trajectory files become paths, anything else a line plot.
    Auto,
    Trajectory,
    Line,
    Scatter,
}

#[derive(Args, Debug, Clone)]
pub struct PlotArgs {
    pub input: PathBuf,
    /// SVG path (default: the input with an .svg extension).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlotKind::Auto)]
    pub kind: PlotKind,
    /// x column for line and scatter plots.
    #[arg(long)]
    pub x: Option<String>,
    /// y columns for line and scatter plots.
    #[arg(long, value_delimiter = ',')]
    pub y: Option<Vec<String>>,
    /// Coordinates per agent in trajectory files.
    #[arg(long, default_value_t = 2)]
    pub agent_dim: usize,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Train a value network and write its checkpoint and log.
    Train(TrainArgs),
    /// Solve the transcribed problem from one start point.
    Baseline(BaselineArgs),
    /// Deploy a checkpoint from one start point and compare with the baseline.
    Eval(EvalArgs),
    /// Deploy with a mid-course state displacement.
    Shock(ShockArgs),
    /// Hypersphere and dimension sweeps.
    #[command(subcommand)]
    Sweep(Sweep),
    /// Single-threaded policy step cost against the baseline estimate.
    Bench(BenchArgs),
    /// Render a CSV file as SVG.
    Plot(PlotArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.single_thread {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let st = cli.single_thread;
    let result = match cli.command {
        Command::Train(a) => commands::train(&a, st),
        Command::Baseline(a) => commands::baseline(&a, st),
        Command::Eval(a) => commands::eval(&a, st),
        Command::Shock(a) => commands::shock(&a, st),
        Command::Sweep(Sweep::Hypersphere(a)) => commands::hypersphere(&a, st),
        Command::Sweep(Sweep::Cod(a)) => commands::cod(&a, st),
        Command::Bench(a) => commands::bench(&a, st),
        Command::Plot(a) => commands::plot(&a, st),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
