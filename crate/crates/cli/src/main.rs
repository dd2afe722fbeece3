//! `uxpr`: simulate bags, sieve them, extract and classify segments, repack
//! verdicts and evaluate, one subcommand per stage.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Malformed or missing flags (exit 1).
    Usage(String),
    /// Unreadable or malformed input file (exit 2).
    Input(String),
    /// Broken internal invariant (exit 3).
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) => f.write_str(m),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Parser, Debug)]
#[command(name = "uxpr", version, about = "Sieve-based electrical device detection in volumetric scans")]
pub struct Cli {
    /// TOML file of option values; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-bag and per-fold work.
    #[arg(long, global = true, env = "UXPR_JOBS", value_name = "N")]
    pub jobs: Option<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate simulated bags from an object pool.
    Simulate(SimulateArgs),
    /// Sieve a volume through an explicit scale list.
    Decompose(DecomposeArgs),
    /// Sieve a bag through a log-spaced schedule.
    Unpack(UnpackArgs),
    /// Harvest segments and histograms as JSON lines.
    Extract(ExtractArgs),
    /// Fit a classifier to labelled segments.
    Train(TrainArgs),
    /// Classify segments with a saved model.
    Predict(PredictArgs),
    /// Leave-one-bag-out or held-out-device evaluation.
    Evaluate(EvaluateArgs),
    /// Vote segment verdicts back onto voxels.
    Repack(RepackArgs),
    /// Sum or maximum projection of a volume.
    Flatten(FlattenArgs),
    /// Unpack, extract, predict and repack one bag.
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Decompose(_) => "decompose",
            Command::Unpack(_) => "unpack",
            Command::Extract(_) => "extract",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Repack(_) => "repack",
            Command::Flatten(_) => "flatten",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Pool manifest (pool.json) or the directory holding it.
    #[arg(long)]
    pub pool: Option<String>,
    /// Create a phantom pool at --pool if none exists there.
    #[arg(long)]
    pub generate_pool: bool,
    /// Electrical objects in a generated pool [10].
    #[arg(long)]
    pub electrical: Option<String>,
    /// Non-electrical objects in a generated pool [20].
    #[arg(long)]
    pub non_electrical: Option<String>,
    /// Seed for a generated pool [0].
    #[arg(long)]
    pub pool_seed: Option<String>,
    /// Number of bags [5].
    #[arg(long)]
    pub bags: Option<String>,
    /// Seed of the first bag; bag i uses seed + i [0].
    #[arg(long)]
    pub seed: Option<String>,
    /// Bag side length, or X,Y,Z [64].
    #[arg(long)]
    pub dims: Option<String>,
    /// Objects drawn per bag [20].
    #[arg(long)]
    pub objects: Option<String>,
    /// Placement attempts per object [5].
    #[arg(long)]
    pub attempts: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct SieveArgs {
    /// Filter kind: m, n, o (open) or c (close) [m].
    #[arg(long)]
    pub filter: Option<String>,
    /// Face connectivity: 2, 4 or 6 (must match the volume).
    #[arg(long)]
    pub connectivity: Option<String>,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// Volume file or bag directory.
    #[arg(long = "in")]
    pub input: Option<String>,
    /// Comma-separated increasing scales.
    #[arg(long)]
    pub scales: Option<String>,
    #[command(flatten)]
    pub sieve: SieveArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    /// Explicit scales, overriding the log-spaced schedule.
    #[arg(long)]
    pub scales: Option<String>,
    /// Number of log-spaced scales [5].
    #[arg(long)]
    pub n_scales: Option<String>,
    /// Smallest scale [4000].
    #[arg(long)]
    pub s_min: Option<String>,
    /// Largest scale [2800000].
    #[arg(long)]
    pub s_max: Option<String>,
    #[command(flatten)]
    pub sieve: SieveArgs,
}

#[derive(Args, Debug)]
pub struct UnpackArgs {
    /// Bag directory or volume file.
    #[arg(long = "in")]
    pub input: Option<String>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Decomposition manifest or its directory.
    #[arg(long)]
    pub decomposition: Option<String>,
    /// Bag directory whose labels are used for auto-labelling.
    #[arg(long)]
    pub bag: Option<String>,
    /// Emit one segment per ground-truth object instead (needs --bag).
    #[arg(long)]
    pub ground_truth: bool,
    /// Segment size bounds: bracketing or all [bracketing].
    #[arg(long)]
    pub bounds: Option<String>,
    /// two_class or five_class [two_class].
    #[arg(long)]
    pub task: Option<String>,
    /// Bag id written into segment records [bag directory name].
    #[arg(long)]
    pub bag_id: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct ClassifierArgs {
    /// knn, forest or ensemble [forest].
    #[arg(long)]
    pub classifier: Option<String>,
    /// Trees in a forest [500].
    #[arg(long)]
    pub trees: Option<String>,
    /// Candidate bins per split [16].
    #[arg(long)]
    pub features_per_split: Option<String>,
    /// Tree depth limit [unlimited].
    #[arg(long)]
    pub max_depth: Option<String>,
    /// Minimum instances per leaf [1].
    #[arg(long)]
    pub min_leaf: Option<String>,
    /// Forest seed [0].
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Segment JSON-lines files (repeatable).
    #[arg(long, num_args = 1..)]
    pub segments: Vec<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, num_args = 1..)]
    pub segments: Vec<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Bag directories, or directories of bags (repeatable).
    #[arg(long, num_args = 1..)]
    pub bags: Vec<String>,
    /// lobo (leave one bag out) or loco (leave one device kind out) [lobo].
    #[arg(long)]
    pub protocol: Option<String>,
    /// Segment source: ground_truth, sieve or flattened [ground_truth].
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub bounds: Option<String>,
    /// Projection axis for the flattened source [z].
    #[arg(long)]
    pub axis: Option<String>,
    /// Pool manifest, for loco.
    #[arg(long)]
    pub pool: Option<String>,
    /// Device kind held out, for loco.
    #[arg(long)]
    pub held_out: Option<String>,
    /// Fresh test bags, for loco [5].
    #[arg(long)]
    pub test_bags: Option<String>,
    /// Seed of the first test bag, for loco [0].
    #[arg(long)]
    pub test_seed: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct RepackArgs {
    #[arg(long, num_args = 1..)]
    pub segments: Vec<String>,
    /// Predictions CSV.
    #[arg(long)]
    pub predictions: Option<String>,
    /// Bag directory or volume giving the output shape.
    #[arg(long)]
    pub bag: Option<String>,
    /// Output shape X,Y,Z when no --bag is given.
    #[arg(long)]
    pub dims: Option<String>,
    /// Axis of the verdict projections [z].
    #[arg(long)]
    pub axis: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct FlattenArgs {
    /// Bag directory or volume file.
    #[arg(long = "in")]
    pub input: Option<String>,
    /// x, y or z [z].
    #[arg(long)]
    pub axis: Option<String>,
    /// Also write the maximum intensity projection.
    #[arg(long)]
    pub mip: bool,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub bag: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub bounds: Option<String>,
    #[arg(long)]
    pub axis: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return match c {
                CliError::Usage(_) => 1,
                CliError::Input(_) => 2,
                CliError::Internal(_) => 3,
            };
        }
        if let Some(c) = cause.downcast_ref::<uxpr::Error>() {
            return match c {
                uxpr::Error::InvalidInput(_) => 1,
                uxpr::Error::DimensionMismatch(_) | uxpr::Error::Format { .. } | uxpr::Error::Io { .. } => 2,
                uxpr::Error::Invariant(_) => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| commands::run(&cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let code = exit_code(&e);
            if code == 1 {
                eprintln!("error: {e:#}\n\nFor more information, try 'uxpr {} --help'.", cli.command.name());
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
        Err(_) => ExitCode::from(3),
    }
}
