//! Command-line grammar. Every option is optional here; defaults live in the
//! resolved configs so that a config file can fill anything a flag omits.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "nca-sense", version, about = "Decentralized center-of-contact estimation with neural cellular automata")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_empty<T>(v: &[T]) -> bool {
    v.is_empty()
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Base random seed.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory [default: $NCA_SENSE_OUT/<command> or ./nca-sense-out/<command>].
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Grid dimensions as HxW.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Sensor pitch in mm, used to report errors in mm.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitch: Option<f64>,
    /// Reading mode: binary, fractional or pressure.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// JSON config file (or a previous run's manifest); flags take precedence.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its train/test split.
    Gen(GenArgs),
    /// Train an NCA model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train the centralized CNN baseline.
    Baseline(BaselineArgs),
    /// Run an experiment sweep.
    #[command(subcommand)]
    Exp(ExpCommand),
}

#[derive(Debug, Subcommand)]
pub enum ExpCommand {
    /// Compare two error distributions (e.g. calibrated vs uncalibrated).
    Perf(PerfArgs),
    /// Sweep the fraction of faulty sensors.
    Fault(SweepArgs),
    /// Sweep the signal-relative noise level.
    Noise(SweepArgs),
    /// Evaluate one model on several grid sizes.
    Scale(ScaleArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// `default` or a comma-separated list of shape names.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapes: Option<String>,
    /// Placements per shape.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Fraction of samples in the training split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,
    /// Also write calibrated and uncalibrated sensor-array variants.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub calibration: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training split CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Optimizer steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Pool entries per step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Sample pool size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Stop on a plateau of the moving-average training metric.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
    /// Hidden channels per cell.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Processing layer width.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// Minimum rollout length.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_min: Option<usize>,
    /// Maximum rollout length.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_max: Option<usize>,
    /// Per-cell update probability.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fire_rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Write the rollout of the first sample as JSON lines.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub trace: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    /// Training split CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Optimizer steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Samples per step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PerfArgs {
    /// First checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    /// First dataset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Second checkpoint [default: --ckpt].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt_b: Option<PathBuf>,
    /// Second dataset [default: --data].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_b: Option<PathBuf>,
    /// Label of the first condition.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_a: Option<String>,
    /// Label of the second condition.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_b: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    /// Test dataset CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Comma-separated condition levels in [0, 1].
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "is_empty")]
    pub levels: Vec<f64>,
    /// Trials per condition.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScaleArgs {
    /// NCA checkpoint to evaluate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    /// Comma-separated square grid sizes.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "is_empty")]
    pub sizes: Vec<usize>,
    /// Placements per shape and size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<usize>,
    /// Include 100x100.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub full: bool,
    /// Scale rollout steps with grid size relative to --reference-size.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub scale_steps: bool,
    /// Grid size the rollout length refers to.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_size: Option<usize>,
}
