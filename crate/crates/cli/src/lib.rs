//! Command-line driver: dataset synthesis, training, evaluation, prediction,
//! the ablation grid and the gradient-check suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod overlay;
pub mod suite;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ModelFlags;
pub use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "mbtnet", version, about = "Cell-border segmentation with a multi-branch hybrid transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cell-mosaic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Segment one image, optionally overlaying ground truth.
    Predict(PredictArgs),
    /// Train and score the transformer-depth by body/edge grid.
    Ablate(AblateArgs),
    /// Finite-difference checks of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct OutFlags {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Write into an existing non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub out: OutFlags,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub out: OutFlags,
    /// Dataset directory or manifest file.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Required unless `--oracle-mode` is given.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: mbtnet::data::Split,
    /// Score the ground-truth masks against themselves.
    #[arg(long)]
    pub oracle_mode: bool,
    /// Directory for `metrics.csv`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    /// Ground-truth mask; enables the overlay.
    #[arg(long, value_name = "PATH")]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutFlags,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub out: OutFlags,
    /// Dataset to use; synthesized into the output directory when absent.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Run grid cells concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Restrict to these checks.
    #[arg(long, value_name = "NAME", value_delimiter = ',')]
    pub only: Vec<String>,
    /// Negative control: break the backward pass of one check.
    #[arg(long, value_name = "NAME", hide = true)]
    pub corrupt: Option<String>,
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth::run(&a).map(drop),
        Command::Train(a) => commands::train::run(&a).map(drop),
        Command::Eval(a) => commands::eval::run(&a).map(drop),
        Command::Predict(a) => commands::predict::run(&a).map(drop),
        Command::Ablate(a) => commands::ablate::run(&a).map(drop),
        Command::Gradcheck(a) => commands::gradcheck::run(&a).map(drop),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
