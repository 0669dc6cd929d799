//! `mfo`: motion prediction and refinement from the command line.
//!
//! Subcommands cover the whole pipeline: synthesize a dataset, train a
//! predictor, roll out or refine predictions, plan jointly with a
//! robot, and score the results. Every run writes a manifest (argv,
//! input hashes, seed, artifact paths) next to its outputs, and
//! `mfo replay` reruns a manifest to reproduce those artifacts byte
//! for byte.
//!
//! On failure the process exits nonzero and prints a single JSON
//! object to stderr: `{"error": {"class": ..., "message": ...}}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfo_core::dataio::GeneratorKind;

#[derive(Parser)]
#[command(
    name = "mfo",
    version,
    about = "Human motion prediction, refinement and joint planning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic motion dataset.
    Synth(SynthArgs),
    /// Train a predictor on a dataset directory.
    Train(TrainArgs),
    /// Roll out an unperturbed prediction from an observation.
    Predict(PredictArgs),
    /// Refine a prediction against an objective file.
    Optimize(OptimizeArgs),
    /// Refine the prediction and plan a robot path together.
    PlanJoint(PlanJointArgs),
    /// Score prediction methods against ground truth.
    Eval(EvalArgs),
    /// Export an optimization record's trace as CSV.
    TraceExport(TraceExportArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

/// Mirror of the generator kinds with CLI value names.
#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Reaching,
    Walking,
    ReachingWithObstacle,
}

impl From<KindArg> for GeneratorKind {
    fn from(kind: KindArg) -> Self {
        match kind {
            KindArg::Reaching => GeneratorKind::Reaching,
            KindArg::Walking => GeneratorKind::Walking,
            KindArg::ReachingWithObstacle => GeneratorKind::ReachingWithObstacle,
        }
    }
}

/// Parses "x,y,z" into a point, for flags that take a position.
fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad coordinate '{part}': {e}"))?;
    }
    Ok(out)
}

#[derive(Args)]
pub struct SynthArgs {
    /// Motion family to generate.
    #[arg(long, value_enum, default_value = "reaching")]
    pub kind: KindArg,
    /// Number of trajectories.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Length of each trajectory in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub duration_seconds: f64,
    /// Frames per second.
    #[arg(long, default_value_t = 30.0)]
    pub frame_rate: f64,
    /// Master seed; each trajectory derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skeleton file; the built-in 20-joint human when omitted.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Where to write dataset/, skeleton.json and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory holding traj_*.csv files (a `synth` dataset/ dir).
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    /// Seed for weight init, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Window length per training sample, seconds.
    #[arg(long, default_value_t = 2.0)]
    pub slice_seconds: f64,
    /// Leading part of the window fed to the encoder, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub input_seconds: f64,
    /// Window step in frames when slicing.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Global gradient-norm clip.
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    /// Fraction of trajectories held out for the loss curve.
    #[arg(long, default_value_t = 0.1)]
    pub holdout_fraction: f64,
    /// Hidden units per recurrent layer.
    #[arg(long, default_value_t = 64)]
    pub hidden_size: usize,
    /// Stacked recurrent layers.
    #[arg(long, default_value_t = 1)]
    pub num_layers: usize,
    /// Where to write model.bin, loss_curve.csv and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Observed trajectory CSV to continue from.
    #[arg(long)]
    pub observed: PathBuf,
    /// Prediction length in frames.
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    /// Skeleton file for the output headers; built-in human when omitted.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Where to write prediction.csv and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct OptimizeArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Observed trajectory CSV to continue from.
    #[arg(long)]
    pub observed: PathBuf,
    /// Objective file (weights, goals, scene reference, solver settings).
    #[arg(long)]
    pub objective: Option<PathBuf>,
    /// Skeleton file; built-in human when omitted.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Where to write prediction.csv, record.json, trace.csv and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct PlanJointArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Observed human trajectory CSV.
    #[arg(long)]
    pub observed: PathBuf,
    /// Objective file; must set a robot goal unless --robot-init is given.
    #[arg(long)]
    pub objective: Option<PathBuf>,
    /// Skeleton file; built-in human when omitted.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Robot position at the start of the plan, as "x,y,z".
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub robot_start: [f64; 3],
    /// Robot trajectory CSV warm start: planned steps only, the start
    /// comes from --robot-start. Straight line to the goal when omitted.
    #[arg(long)]
    pub robot_init: Option<PathBuf>,
    /// Where to write prediction.csv, robot.csv, record.json, trace.csv
    /// and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory holding ground-truth traj_*.csv files.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Trained model file; adds the "model" row.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also refine each prediction toward the true final goal
    /// ("optimized" row). Needs --model.
    #[arg(long)]
    pub optimized: bool,
    /// Objective template for the optimized row; its goal and horizon
    /// are filled in per window. A goal-only objective when omitted.
    #[arg(long)]
    pub objective: Option<PathBuf>,
    /// Skeleton file; built-in human when omitted.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// End effector tracked by the optimized goal and the wrist metric.
    #[arg(long, default_value = "r_wrist")]
    pub goal_joint: String,
    /// Score only the goal joint instead of the nine key joints, and
    /// add the straight-line "interp" row.
    #[arg(long)]
    pub wrist_only: bool,
    /// Window length per evaluation sample, seconds.
    #[arg(long, default_value_t = 2.0)]
    pub slice_seconds: f64,
    /// Leading part of the window given to each method, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub input_seconds: f64,
    /// Window step in frames; one window length (no overlap) when omitted.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Cap on the number of evaluation windows.
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Comma-separated horizons in milliseconds.
    #[arg(long, value_delimiter = ',')]
    pub horizons_ms: Option<Vec<u32>>,
    /// Where to write report.csv and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct TraceExportArgs {
    /// Optimization record (record.json from optimize or plan-joint).
    #[arg(long)]
    pub record: PathBuf,
    /// Where to write trace.csv and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct ReplayArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", commands::error_json(&err));
            ExitCode::FAILURE
        }
    }
}
