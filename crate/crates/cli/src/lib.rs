//! Command-line pipeline over `eqlatent-core`: corpus generation, dataset
//! embedding, training, evaluation, discovery and latent-grid export.
//!
//! Every subcommand accepts `--config <file>` with `key = value` lines;
//! flags on the command line win over the file.

pub mod artifact;
mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

pub use self::commands::{CorpusManifest, EvalReport, LatentGridReport};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or input files.
    #[error("{0}")]
    User(String),
    #[error(transparent)]
    Internal(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::User(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "eqlatent",
    version,
    about = "Symbolic regression in a learned latent space of equation DAGs"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a corpus of unique equations and one dataset per equation.
    GenCorpus(GenCorpusArgs),
    /// Compute condition features for every corpus dataset.
    Embed(EmbedArgs),
    /// Train the conditional VAE.
    Train(TrainArgs),
    /// Reconstruction accuracy and prior-sample statistics.
    Eval(EvalArgs),
    /// Search the latent space for the equation that best fits a dataset.
    Discover(DiscoverArgs),
    /// Score a 2D principal-component grid of the latent space.
    PlotLatent(PlotLatentArgs),
    /// Re-check validity and every dataset row of a corpus.
    VerifyCorpus(VerifyCorpusArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input variables.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub max_internal_nodes: usize,
    /// Rows per dataset.
    #[arg(long, default_value_t = 500)]
    pub rows: usize,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub input_low: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub input_high: f64,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Where set-encoder weights come from.
#[derive(Clone, Debug, Args, Serialize)]
pub struct EncoderArgs {
    /// `reference` for the built-in seeded weights, or a weights file.
    #[arg(long)]
    pub weights: Option<String>,
    /// Seed of the reference weights.
    #[arg(long, default_value_t = 0)]
    pub encoder_seed: u64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// poly, set_mean, set_mlp5 or set_mlp10.
    #[arg(long, default_value = "poly")]
    pub provider: String,
    #[arg(long, default_value_t = 2)]
    pub poly_degree: usize,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Embedding cache written by `embed`; required unless `--condition none`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// none, poly, set_mean, set_mlp5 or set_mlp10.
    #[arg(long, default_value = "none")]
    pub condition: String,
    /// Use only the first `n` training equations.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 56)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 25)]
    pub max_nodes: usize,
    #[arg(long, default_value_t = 0.005)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub keep_checkpoints: usize,
    /// Continue from the latest checkpoint in `--checkpoint-dir`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    #[serde(skip)]
    pub checkpoint_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint file, or a checkpoint directory (its latest checkpoint).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Corpus split whose equations are reconstructed: train or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BoArgs {
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub init_points: usize,
    /// Half-width of the search box `[-b, b]^k`.
    #[arg(long, default_value_t = 3.0)]
    pub bound: f64,
    #[arg(long, default_value_t = 1.0)]
    pub length_scale: f64,
    #[arg(long, default_value_t = 0.25)]
    pub signal_variance: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub noise_variance: f64,
    #[arg(long, default_value_t = 1024)]
    pub candidates: usize,
    #[arg(long)]
    pub refit_length_scale: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with an `x1,...,xd,y` header.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Ground-truth equation in infix form; adds an equivalence verdict.
    #[arg(long)]
    pub gt: Option<String>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub bo: BoArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Score trajectory CSV.
    #[arg(long)]
    #[serde(skip)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PlotLatentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Cells per side.
    #[arg(long, default_value_t = 40)]
    pub grid: usize,
    /// Extension beyond the observed component range, as a fraction.
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct VerifyCorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

/// Parses `args` (program name first), applies any config file and runs
/// the subcommand.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = config::expand_args(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::User(e.render().to_string())),
    };
    match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Discover(a) => commands::discover(&a),
        Command::PlotLatent(a) => commands::plot_latent(&a),
        Command::VerifyCorpus(a) => commands::verify_corpus(&a),
    }
}
