use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "red-dot", version, about = "Relevant-evidence-aware multimodal fact-checking over precomputed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import manifests and embedding matrices into a dataset directory.
    Ingest(IngestArgs),
    /// Check a dataset for dangling ids, dimension mismatches and split overlap.
    Validate(ValidateArgs),
    /// Generate a synthetic dataset with known relevant evidence.
    Synth(SynthArgs),
    /// Rank each claim's candidate evidence by cosine similarity.
    Rank(RankArgs),
    /// Mine hard negatives from each claim's most similar neighbor.
    Mine(MineArgs),
    /// Assemble shuffled evidence bundles.
    Bundle(BundleArgs),
    /// Train a model under the in-distribution or cross-validation protocol.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck(GradcheckArgs),
    /// Per-slot relevance reports and similarity/label correlations.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolArg {
    #[default]
    Idv,
    Oodcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    All,
    TrueVsOoc,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding `<split>.jsonl` manifests, the four `.rede` matrices
    /// and an optional `categories.json` (pair_id to category).
    #[arg(long)]
    pub source: PathBuf,
    /// Free-text provenance recorded in the dataset metadata.
    #[arg(long, default_value = "")]
    pub provenance: String,
    /// Output dataset directory; existing dataset files are overwritten.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Training pairs.
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    /// Validation pairs (default: a quarter of --pairs).
    #[arg(long)]
    pub val_pairs: Option<usize>,
    /// Test pairs (default: a quarter of --pairs).
    #[arg(long)]
    pub test_pairs: Option<usize>,
    /// External-benchmark pairs; 0 omits the split.
    #[arg(long, default_value_t = 0)]
    pub external_pairs: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Noise scale of relevant evidence and truthful captions.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Relevant text evidence per pair.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Relevant image evidence per pair.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Random distractors per evidence pool.
    #[arg(long, default_value_t = 2)]
    pub distractors: usize,
    /// Fraction of truthful pairs.
    #[arg(long, default_value_t = 0.5)]
    pub truthful_fraction: f64,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory; existing dataset files are overwritten.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to process.
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Run directory for artifacts.
    #[arg(long)]
    pub out: PathBuf,
    /// Recompute even if the artifact exists.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub stage: StageArgs,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Text negatives per claim.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Image negatives per claim.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct BundleArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Text evidence per polarity.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Image evidence per polarity.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Seed for padding and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Top-ranked evidence only, without injected negatives.
    #[arg(long)]
    pub retrieved_only: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model variant: baseline, ssl, ssl_ga, dsl, dsl_ga or dsl_d2.
    #[arg(long)]
    pub variant: Option<String>,
    /// Comma-separated fusion ops, e.g. `image,text,add,sub,mul`.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Text evidence per polarity.
    #[arg(long)]
    pub m: Option<usize>,
    /// Image evidence per polarity.
    #[arg(long)]
    pub k: Option<usize>,
    /// Evaluation protocol.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Folds for cross-validation.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed for initialization, shuffling, dropout and bundling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a configuration key, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory for bundles, checkpoints and the run record.
    #[arg(long)]
    pub out: PathBuf,
    /// Retrain and rebuild bundles even if a matching run exists.
    #[arg(long)]
    pub force: bool,
    /// Print a plain-text table instead of JSON.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Accuracy over all pairs, or truthful and out-of-context pairs only.
    #[arg(long, value_enum, default_value = "all")]
    pub mode: EvalModeArg,
    /// Top-ranked evidence only, without injected negatives.
    #[arg(long)]
    pub retrieved_only: bool,
    /// Seed for padding and shuffling of bundles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write metrics and per-pair predictions as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a plain-text table instead of JSON.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Check one variant instead of all six.
    #[arg(long)]
    pub variant: Option<String>,
    /// Encoder layers.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Seed for weights and inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file; omit to report similarity correlations only.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to report on.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Number of pairs with per-slot attention reports.
    #[arg(long, default_value_t = 5)]
    pub limit: usize,
    /// Seed for padding and shuffling of bundles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a plain-text table instead of JSON.
    #[arg(long)]
    pub table: bool,
}
