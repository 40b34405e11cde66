//! Command-line front end: dataset generation, training, evaluation,
//! frame-sequence detection, FPS benchmarking and the input-size ablation.

pub mod cmd;
pub mod overlay;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lumendet::arch::Variant;
use lumendet::postprocess::{DEFAULT_CONF, DEFAULT_IOU};

pub use cmd::ablate::AblationRow;
pub use cmd::bench::{BenchReport, StageLatency, MIN_STABLE_FRAMES};
pub use cmd::eval::EvalOutput;

#[derive(Debug, Parser)]
#[command(name = "lumendet", version, about = "Bronchial orifice detector on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with labels and split manifests.
    Generate(GenerateArgs),
    /// Train a detector from `train.tsv` / `val.tsv` manifests.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a predictions file) on a manifest.
    Eval(EvalArgs),
    /// Detect on a directory of frames and write annotated copies.
    Detect(DetectArgs),
    /// Time the sequential batch-1 pipeline over a directory of frames.
    Bench(BenchArgs),
    /// Evaluate one checkpoint at several input sizes.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Thresholds {
    /// Minimum confidence kept after decoding.
    #[arg(long, default_value_t = DEFAULT_CONF)]
    pub conf: f32,
    /// IoU above which NMS suppresses a box.
    #[arg(long, default_value_t = DEFAULT_IOU)]
    pub iou: f32,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    /// Generator settings as `key = value` lines; defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write every image from the in-domain spec with a single `all.tsv`
    /// instead of train/val/test1/test2 splits.
    #[arg(long)]
    pub flat: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory holding `train.tsv` and `val.tsv`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config with training and model keys; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "v8")]
    pub variant: VariantArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training input size; must be a multiple of 32.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score a JSON-lines detections file instead of running a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Output directory for `report.json`, `pr.csv` and `pr.svg`.
    #[arg(long)]
    pub out: PathBuf,
    /// Input size; defaults to the checkpoint's training size.
    #[arg(long)]
    pub size: Option<usize>,
    /// Model column of the printed row; defaults to the variant name.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of frames, processed in lexicographic order.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
    /// Where to save the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Content sizes; sizes that are not multiples of 32 are letterboxed
    /// into the next multiple.
    #[arg(long, value_delimiter = ',', default_value = "160,144,96,64")]
    pub sizes: Vec<usize>,
    /// Where to save the CSV table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantArg {
    V8,
    V12,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::V8 => Variant::V8,
            VariantArg::V12 => Variant::V12,
        }
    }
}

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, missing inputs or invalid config files.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<lumendet::Error> for CliError {
    fn from(e: lumendet::Error) -> Self {
        use lumendet::arch::ArchError;
        use lumendet::data::DataError;
        use lumendet::train::TrainError;
        use lumendet::Error as E;
        match &e {
            E::Arch(ArchError::Config(_) | ArchError::Kv(_))
            | E::Data(DataError::Spec(_) | DataError::Kv(_) | DataError::TooFew(_))
            | E::Train(TrainError::Config(_) | TrainError::Kv(_) | TrainError::Arch(_))
            | E::Postprocess(lumendet::postprocess::PostprocessError::Threshold { .. }) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.into()),
        }
    }
}

macro_rules! lift {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                lumendet::Error::from(e).into()
            }
        }
    )*};
}
lift!(
    lumendet::data::DataError,
    lumendet::arch::ArchError,
    lumendet::train::TrainError,
    lumendet::tensor::TensorError,
    lumendet::metrics::MetricsError,
    lumendet::postprocess::PostprocessError
);

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd::generate::run(&a),
        Command::Train(a) => cmd::train::run(&a),
        Command::Eval(a) => cmd::eval::run(&a).map(|_| ()),
        Command::Detect(a) => cmd::detect::run(&a),
        Command::Bench(a) => cmd::bench::run(&a).map(|_| ()),
        Command::Ablate(a) => cmd::ablate::run(&a).map(|_| ()),
    }
}
