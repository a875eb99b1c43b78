use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ovdbench", version, about = "Offline evaluation toolkit for fine-grained open-vocabulary detection")]
pub struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions under one of the evaluation protocols
    Evaluate(EvaluateArgs),
    /// Per-caption size filtering and overlap suppression, then aggregation
    Postprocess(PostprocessArgs),
    /// Leakage-safe train/val/test split of timestamped frames
    Split(SplitArgs),
    /// Per-class image counts as CSV
    Stats(StatsArgs),
    /// Generate a synthetic corpus and mock detector outputs
    Synth(SynthArgs),
    /// Check dataset (and optionally predictions) files
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolName {
    Supervised,
    #[value(name = "3fovd")]
    #[serde(rename = "3fovd")]
    ThreeFOvd,
    Fgovd,
    Ovvg,
}

/// Suppression settings shared by `evaluate` and `postprocess`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SuppressionArgs {
    /// Published size and overlap preset: rp (retail products) or c (vehicles)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub overlap_threshold: Option<f64>,
    /// Minimum box size WxH; a box is dropped when both sides are smaller
    #[arg(long)]
    pub min_size: Option<String>,
    /// Maximum box size WxH; a box is dropped when either side is larger
    #[arg(long)]
    pub max_size: Option<String>,
}

impl SuppressionArgs {
    pub fn is_set(&self) -> bool {
        self.preset.is_some()
            || self.overlap_threshold.is_some()
            || self.min_size.is_some()
            || self.max_size.is_some()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Predictions (supervised, 3fovd), caption groups (fgovd) or grounding
    /// queries (ovvg)
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum)]
    pub protocol: ProtocolName,
    #[command(flatten)]
    pub suppression: SuppressionArgs,
    /// Reject tokens that do not occur in their caption (3fovd)
    #[arg(long)]
    pub strict_tokens: bool,
    /// Single IoU threshold instead of 0.50:0.05:0.95 (accuracy threshold for ovvg)
    #[arg(long)]
    pub iou: Option<f64>,
    /// Negatives per caption group (fgovd); inferred from the file when omitted
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Vocabulary count (fgovd); inferred from the file when omitted
    #[arg(long)]
    pub vocabularies: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub suppression: SuppressionArgs,
    /// Only higher-score boxes that are themselves kept may suppress
    #[arg(long)]
    pub kept_only: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Target proportions a:b:c for train:val:test
    #[arg(long, default_value = "64658:12903:11802")]
    pub ratios: String,
    /// Frames of one sequence closer than this many seconds stay together
    #[arg(long, default_value_t = 5.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub images: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Emit timestamped frame sequences instead of still images
    #[arg(long)]
    pub video: bool,
    /// Number of sequences with --video
    #[arg(long, default_value_t = 40)]
    pub sequences: usize,
    /// Mean part boxes per detected object
    #[arg(long, default_value_t = 2.0)]
    pub component_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub confusion_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub unk_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub miss_rate: f64,
    /// Half-width of the corner noise, in pixels
    #[arg(long, default_value_t = 4.0)]
    pub jitter: f64,
    /// Negative captions per object in caption_groups.json
    #[arg(long, default_value_t = 3)]
    pub negatives: usize,
    #[arg(long, default_value_t = 1)]
    pub vocabularies: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}
