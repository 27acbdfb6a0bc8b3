//! The `scd` command line: train, score, infer, synth and gradcheck.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 numeric divergence.

mod config;
mod gradcheck;
mod infer;
mod score;
mod synth;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{env_seed, DatasetPaths, RunConfig, TtaConfig, CONFIG_FILE, SEED_ENV};
pub use score::{score_dirs, ScoreConfig};
pub use train::{RunState, STATE_FILE};

use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "scd", version, about = "Semantic change detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the network (base stage, then the refinement stage) on a dataset.
    Train(TrainArgs),
    /// Score predicted label maps against ground truth.
    Score(ScoreArgs),
    /// Predict a change map for one image pair.
    Infer(InferArgs),
    /// Generate a synthetic bitemporal dataset.
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageArg {
    /// Base stage, then refinement if `atl_epochs > 0`.
    All,
    Base,
    /// Refinement only, starting from a base checkpoint.
    Atl,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root holding manifest.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub atl_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate of both stages.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Test-time augmentation of the final evaluation: none, ms, flip or ms,flip.
    #[arg(long)]
    pub tta: Option<String>,
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    pub stage: StageArg,
    /// Base checkpoint for `--stage atl`; defaults to base.ckpt in the run directory.
    #[arg(long)]
    pub base_checkpoint: Option<PathBuf>,
    /// Continue the run in `--out` from its last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation, leaving the run resumable.
    #[arg(long)]
    pub halt_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory with label1/ and label2/ predicted maps.
    #[arg(long, requires = "gt_dir", conflicts_with = "pairs")]
    pub pred_dir: Option<PathBuf>,
    /// Directory with label1/ and label2/ ground-truth maps.
    #[arg(long, requires = "pred_dir")]
    pub gt_dir: Option<PathBuf>,
    /// CSV with columns pred_label1,pred_label2,gt_label1,gt_label2 (paths relative to the file).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Number of semantic classes; read from the ground-truth manifest when absent.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Report directory; defaults to score/ under the prediction directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration; defaults to config.toml next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub im1: PathBuf,
    #[arg(long)]
    pub im2: PathBuf,
    /// none, ms, flip or ms,flip; defaults to the run configuration.
    #[arg(long)]
    pub tta: Option<String>,
    /// Skip the refinement stage.
    #[arg(long)]
    pub no_atl: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Symmetric,
    Balanced,
    Asymmetric,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root to write.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML generator configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Every operator of the tensor core.
    Op,
    /// The whole network on an 8x8 pair.
    Model,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scope::Op)]
    pub scope: Scope,
    /// Check only this operator.
    #[arg(long)]
    pub op: Option<String>,
    /// Relative tolerance; 1e-4 for operators and 1e-3 for the model by default.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds per operator, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Coordinates sampled per tensor; all for operators and 2 for the model by default.
    #[arg(long)]
    pub max_coords: Option<usize>,
    /// Scale the analytic gradient of this operator (or `model`) by 1.01.
    #[arg(long)]
    pub inject_fault: Option<String>,
    /// Directory for the effective config and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command achieved when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    CheckFailed,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

pub fn execute(cli: Cli) -> crate::Result<Outcome> {
    match cli.command {
        Command::Train(a) => train::run(a),
        Command::Score(a) => score::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Synth(a) => synth::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
    }
}

/// Parse `args` (program name first), run the command and return its exit code.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run_with(std::env::args_os())
}
