use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kgat_core::trainer::TrainConfig;
use kgat_core::WeightConfig;

#[derive(Debug, Parser)]
#[command(
    name = "kgat",
    version,
    about = "Thermal-radiation rank relations and knowledge-guided sample weighting"
)]
pub struct Cli {
    /// Seed for every random draw; overrides seeds in input files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file, or output directory for `render`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduce annotated images to per-class mean gray values and ranks.
    Extract(ExtractArgs),
    /// Estimate pairwise class stability from an extraction document.
    Stability(StabilityArgs),
    /// Per-image loss weights from annotated and predicted relations.
    Weights(WeightsArgs),
    /// Render a synthetic infrared scene with COCO annotations.
    Render(RenderArgs),
    /// Compare the expected rank agreement of two detectors.
    VerifyTheorem(VerifyTheoremArgs),
    /// Train the surrogate detector and report per-epoch losses.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// COCO-style annotation file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory the image file names are relative to.
    #[arg(long)]
    pub images: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub extraction: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Extraction document of the annotated relations.
    #[arg(long)]
    pub extraction: PathBuf,
    /// Extraction document of the predicted relations.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub stability: PathBuf,
    /// Weighting scheme; overrides the run configuration.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene specification document.
    #[arg(long)]
    pub scene: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyTheoremArgs {
    /// Document holding `model_1` and `model_2`.
    #[arg(long)]
    pub model: PathBuf,
    /// Permutation-weighting engine; overrides the model document.
    #[arg(long)]
    pub engine: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub extraction: PathBuf,
    #[arg(long)]
    pub stability: PathBuf,
    /// Training configuration document; falls back to the run
    /// configuration's `train` section.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
}

/// Contents of `--config`. Command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub verbosity: Option<u8>,
    /// Overrides for the weight functions used by `weights` and `train`.
    #[serde(default)]
    pub weights: Option<WeightConfig>,
    /// Weighting scheme used by `weights`.
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}
