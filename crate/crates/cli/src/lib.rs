//! The `simflow` command line: simulate image–flow pairs, ingest annotated
//! clips, train the segmentation network, evaluate it and render flows.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{parse_assignment, parse_size, EstimatorKind, GeneratorKind, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "simflow", version, about = "Image-to-flow pair synthesis and two-stream saliency training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options every pipeline command accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn still images and masks into a simulated pair dataset.
    Simulate(SimulateArgs),
    /// Ingest annotated video clips as a real pair dataset.
    BuildDataset(BuildDatasetArgs),
    /// Train the network on a weighted mixture of datasets.
    Train(TrainArgs),
    /// Score a checkpoint on frames, flows and ground-truth masks.
    Eval(EvalArgs),
    /// Render a .flo file as a color image.
    VizFlow(VizFlowArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorKind>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Frames generated per source image.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Exchange directory of the image-to-video backend.
    #[arg(long)]
    pub frame_exchange: Option<PathBuf>,
    /// Exchange directory of the learned flow backend.
    #[arg(long)]
    pub flow_exchange: Option<PathBuf>,
    /// Keep one seed-chosen frame per source.
    #[arg(long)]
    pub one_per_source: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// A clip directory of frames, or a directory of clip directories.
    #[arg(long)]
    pub frames: PathBuf,
    /// Masks laid out like `--frames`, matched by file stem.
    #[arg(long)]
    pub masks: PathBuf,
    /// Dataset name recorded as the pairs' provenance.
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    #[arg(long)]
    pub flow_exchange: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Named dataset directory, `NAME=DIR`; repeatable.
    #[arg(long = "manifest", value_parser = parse_assignment, required = true)]
    pub manifests: Vec<(String, String)>,
    /// Sampling weight, `NAME=WEIGHT`; repeatable. Replaces the configured mixture.
    #[arg(long = "mixture", value_parser = parse_assignment)]
    pub mixture: Vec<(String, String)>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training resolution, `HxW` or a single side.
    #[arg(long, value_parser = parse_size)]
    pub input_size: Option<(usize, usize)>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from this checkpoint instead of a fresh network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Required unless `--oracle` is given.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub frames: PathBuf,
    /// `.flo` files named after the frames.
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory for `report.txt` and `report.jsonl`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Also write predicted maps here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Use the ground truth as the prediction (pipeline check).
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct VizFlowArgs {
    pub flo: PathBuf,
    pub out: PathBuf,
    /// Magnitude mapped to full saturation; defaults to the field's maximum.
    #[arg(long)]
    pub max_magnitude: Option<f32>,
}

/// Loads the config file and applies the global flags on top.
pub fn effective_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(workers) = common.workers {
        config.workers = workers;
    }
    Ok(config)
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("building worker pool")?;
    pool.install(f)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(&a),
        Command::BuildDataset(a) => commands::build_dataset::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::VizFlow(a) => commands::viz_flow::run(&a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli)
}
