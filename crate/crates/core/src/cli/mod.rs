//! Command-line entry point. Each subcommand reads and writes the on-disk
//! formats only, and records a `run-config.json` snapshot beside its
//! outputs that `nftkit replay` can re-execute.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::error::ErrorCode;

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(
    name = "nftkit",
    version,
    about = "Build, augment and evaluate layered-NFT image/caption datasets"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Base seed for every seeded stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads (default: logical CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Download token metadata and media listed in a target file.
    Ingest(IngestArgs),
    /// Normalize media, filter collections, partition and write the manifest.
    Standardize(StandardizeArgs),
    /// Render captions from metadata or a manifest.
    Caption(CaptionArgs),
    /// Recover per-trait component masks for manifest collections.
    Separate(SeparateArgs),
    /// Emit dynamically masked training pairs for one epoch.
    Augment(AugmentArgs),
    /// Convert JSONL or CSV vectors to an NFTEMB01 matrix.
    EmbedImport(EmbedImportArgs),
    /// Describe an NFTEMB01 matrix.
    EmbedInfo(EmbedInfoArgs),
    /// Inner-product matrix of two embedding files.
    Similarity(SimilarityArgs),
    /// Text-to-image top-k retrieval accuracy, global and per collection.
    Eval(EvalArgs),
    /// Per-collection CVI with paired top-k accuracy.
    Cvi(CviArgs),
    /// JSD between normalized CVI and top-k vectors over an alpha grid.
    AlphaSweep(AlphaSweepArgs),
    /// Check a manifest against its files.
    Verify(VerifyArgs),
    /// Re-run a command from a run-config.json snapshot.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Standardize(_) => "standardize",
            Command::Caption(_) => "caption",
            Command::Separate(_) => "separate",
            Command::Augment(_) => "augment",
            Command::EmbedImport(_) => "embed-import",
            Command::EmbedInfo(_) => "embed-info",
            Command::Similarity(_) => "similarity",
            Command::Eval(_) => "eval",
            Command::Cvi(_) => "cvi",
            Command::AlphaSweep(_) => "alpha-sweep",
            Command::Verify(_) => "verify",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// JSON-lines target list.
    #[arg(long)]
    pub targets: PathBuf,
    /// Download root (default: $NFTKIT_CACHE_ROOT, else ./nft-cache).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only these collections.
    #[arg(long = "collection")]
    pub collections: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 8)]
    pub per_host: usize,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    #[arg(long, default_value_t = 64 * 1024 * 1024)]
    pub max_bytes: u64,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StandardizeArgs {
    /// Ingest root with `<collection>/{meta,media}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "collection")]
    pub collections: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub min_tokens: usize,
    /// train:val:test
    #[arg(long, default_value = "0.8:0.05:0.15")]
    pub ratios: String,
    #[arg(long, default_value = crate::metadata::DEFAULT_TEMPLATE)]
    pub template: String,
    /// Keep attributes whose value is empty.
    #[arg(long)]
    pub keep_empty: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CaptionArgs {
    /// Manifest whose records are re-rendered.
    #[arg(long, conflicts_with = "metadata")]
    pub manifest: Option<PathBuf>,
    /// Single metadata file.
    #[arg(long, requires = "collection")]
    pub metadata: Option<PathBuf>,
    /// Collection name for --metadata.
    #[arg(long)]
    pub collection: Option<String>,
    #[arg(long, default_value = crate::metadata::DEFAULT_TEMPLATE)]
    pub template: String,
    /// Restrict a manifest to one split.
    #[arg(long)]
    pub split: Option<String>,
    /// JSON-lines output `{id, caption}`; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SeparateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Library root; components go to `<library>/<collection>/components`.
    #[arg(long)]
    pub library: PathBuf,
    /// Collections to separate (default: every collection in the manifest).
    #[arg(long = "collection")]
    pub collections: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub rounds: usize,
    #[arg(long, default_value_t = 1)]
    pub support: usize,
    #[arg(long, default_value_t = 0)]
    pub tolerance: u8,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// RGB hex fill colour.
    #[arg(long, default_value = "000000")]
    pub fill: String,
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    /// `independent` or `single`.
    #[arg(long, default_value = "independent")]
    pub mode: String,
    /// Reuse epoch 0's plans for every epoch.
    #[arg(long)]
    pub no_reseed: bool,
    /// Output directory, or `stream` / `-` for JSON lines on stdout.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbedImportArgs {
    /// `.jsonl` lines `{"id", "vector"}` or `.csv` rows `id,v0,v1,...`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Store vectors as given instead of L2-normalizing.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbedInfoArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MatrixInputs {
    /// Image embeddings.
    #[arg(long)]
    pub images: PathBuf,
    /// Text embeddings; row ids must match the image rows.
    #[arg(long)]
    pub texts: PathBuf,
    /// Restrict to this manifest's tokens.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Restrict the manifest to one split.
    #[arg(long)]
    pub split: Option<String>,
    /// Use the stored vectors without L2 normalization.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: MatrixInputs,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// `csv` or `jsonl`.
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CviArgs {
    #[command(flatten)]
    pub inputs: MatrixInputs,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value = "population")]
    pub variance: String,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AlphaSweepArgs {
    #[command(flatten)]
    pub inputs: MatrixInputs,
    /// `start:stop:step`
    #[arg(long, default_value = "0:1:0.05")]
    pub grid: String,
    /// Which top-k accuracy to calibrate against.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Module(#[from] crate::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "cli.usage",
            CliError::Module(e) => e.code(),
            CliError::Io(_) => "cli.io",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

macro_rules! module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Module(e.into())
            }
        }
    )*};
}

module_error!(
    crate::metadata::MetadataError,
    crate::ingest::IngestError,
    crate::standardize::StandardizeError,
    crate::components::ComponentError,
    crate::dynmask::DynmaskError,
    crate::embeddings::EmbeddingError,
    crate::metrics::MetricsError
);

/// Snapshot written beside a command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub command: String,
    pub cli: Cli,
}

pub const RUN_CONFIG_FILE: &str = "run-config.json";

pub(crate) fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

/// Parses `argv`, runs the command, prints an error record on failure and
/// returns the process exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.global.log_level);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let record = json!({"error": {"code": e.code(), "message": e.to_string()}});
            eprintln!("{record}");
            e.exit_code()
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // fails only if a pool already exists, which is harmless on replay
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    commands::dispatch(&cli)
}
