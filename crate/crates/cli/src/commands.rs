//! Subcommand implementations.
//!
//! Shared conventions: inputs are loaded and validated before anything
//! is written, so a failing run leaves no partial output; artifacts use
//! fixed names inside --out-dir; each run ends by saving a
//! `<command>.manifest.json` holding the argv, input hashes and
//! artifact list that `replay` consumes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use nalgebra::{DVector, Vector3};

use mfo_core::costs::{CostWeights, HumanPoint, ObjectiveSpec, RobotTrajectory};
use mfo_core::dataio::{
    default_horizons_ms, evaluate, generate_synthetic, horizon_frames, interpolation_baseline,
    load_dataset, load_objective, load_record, load_scene, load_skeleton, load_trajectory_csv,
    save_dataset, save_loss_curve_csv, save_record, save_skeleton, save_trace_csv,
    save_trajectory_csv, zero_velocity_baseline, EvalReport, ObjectiveDoc, OptimizationRecord,
    RunManifest, SyntheticSpec,
};
use mfo_core::kinematics::{fk_positions, Skeleton, StateLayout, Trajectory};
use mfo_core::model::{load_model, rollout, save_model, DeltaInput, ModelConfig, PredictorModel};
use mfo_core::optimizer::{optimize_joint, optimize_prediction, JointProblem, LbfgsConfig};
use mfo_core::scene::Scene;
use mfo_core::training::{slice_dataset, split_holdout, train as fit, TrainingConfig};
use mfo_core::{Error, Result};

use crate::{
    Cli, Command, EvalArgs, OptimizeArgs, PlanJointArgs, PredictArgs, ReplayArgs, SynthArgs,
    TraceExportArgs, TrainArgs,
};

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Synth(args) => synth(&args, &argv),
        Command::Train(args) => train(&args, &argv),
        Command::Predict(args) => predict(&args, &argv),
        Command::Optimize(args) => optimize(&args, &argv),
        Command::PlanJoint(args) => plan_joint(&args, &argv),
        Command::Eval(args) => eval(&args, &argv),
        Command::TraceExport(args) => trace_export(&args, &argv),
        Command::Replay(args) => replay(&args),
    }
}

/// The single-line JSON object printed to stderr on failure.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({
        "error": { "class": err.class(), "message": err.to_string() }
    })
    .to_string()
}

fn load_skel_or_default(path: &Option<PathBuf>) -> Result<Skeleton> {
    match path {
        Some(p) => load_skeleton(p),
        None => Ok(Skeleton::default_human()),
    }
}

/// Flags whose absence is a configuration error rather than a usage
/// error, so scripts get the JSON error contract instead of clap output.
fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{what} is required")))
}

fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.manifest.json"))
}

/// The traj_*.csv files a dataset directory contributes, in load order.
/// Must select exactly what `load_dataset` reads.
fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("traj_"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Hashes the objective file and, when it references one, its scene file.
fn record_objective_inputs(manifest: &mut RunManifest, objective_path: &Path) -> Result<()> {
    manifest.record_input(objective_path)?;
    let doc: ObjectiveDoc = serde_json::from_str(&fs::read_to_string(objective_path)?)?;
    if let Some(rel) = &doc.scene_file {
        let base = objective_path.parent().unwrap_or_else(|| Path::new("."));
        manifest.record_input(&base.join(rel))?;
    }
    Ok(())
}

fn synth(args: &SynthArgs, argv: &[String]) -> Result<()> {
    let skel = load_skel_or_default(&args.skeleton)?;
    let spec = SyntheticSpec {
        kind: args.kind.into(),
        count: args.count,
        duration_seconds: args.duration_seconds,
        frame_rate: args.frame_rate,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let trajectories = generate_synthetic(&spec, &skel)?;

    fs::create_dir_all(&args.out_dir)?;
    let dataset_dir = args.out_dir.join("dataset");
    let paths = save_dataset(&dataset_dir, &trajectories, Some(&skel))?;
    let skel_path = args.out_dir.join("skeleton.json");
    save_skeleton(&skel_path, &skel)?;

    let mut manifest = RunManifest::new("synth", argv.to_vec());
    manifest.seed = Some(args.seed);
    if let Some(p) = &args.skeleton {
        manifest.record_input(p)?;
    }
    for p in &paths {
        manifest.record_artifact(p);
    }
    manifest.record_artifact(&skel_path);
    manifest.save(&manifest_path(&args.out_dir, "synth"))?;

    println!(
        "wrote {} trajectories under {}",
        paths.len(),
        dataset_dir.display()
    );
    Ok(())
}

fn train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let inputs = dataset_files(&args.data_dir)?;
    let data = load_dataset(&args.data_dir)?;
    if data.is_empty() {
        return Err(Error::Config(format!(
            "no traj_*.csv files under {}",
            args.data_dir.display()
        )));
    }
    let state_dim = data[0].dim();
    let config = TrainingConfig {
        slice_seconds: args.slice_seconds,
        input_seconds: args.input_seconds,
        frame_rate: data[0].frame_rate,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        stride: args.stride,
        grad_clip: args.grad_clip,
        holdout_fraction: args.holdout_fraction,
    };
    let (train_trajs, holdout_trajs) = split_holdout(data, config.holdout_fraction)?;
    let (train_samples, skipped) = slice_dataset(&train_trajs, &config)?;
    let (holdout_samples, _) = slice_dataset(&holdout_trajs, &config)?;
    if skipped > 0 {
        eprintln!(
            "note: skipped {skipped} trajectories shorter than the {} s window",
            config.slice_seconds
        );
    }

    let model_config = ModelConfig {
        state_dim,
        hidden_size: args.hidden_size,
        num_layers: args.num_layers,
        pos_input_mask: ModelConfig::default_pos_mask(state_dim),
        frame_rate: config.frame_rate,
    };
    let init = PredictorModel::random_init(model_config, args.seed)?;
    let out = fit(&init, &train_samples, &holdout_samples, &config)?;

    fs::create_dir_all(&args.out_dir)?;
    let model_path = args.out_dir.join("model.bin");
    let curve_path = args.out_dir.join("loss_curve.csv");
    save_model(&out.model, &model_path)?;
    save_loss_curve_csv(&curve_path, &out.curve)?;

    let mut manifest = RunManifest::new("train", argv.to_vec());
    manifest.seed = Some(args.seed);
    for p in &inputs {
        manifest.record_input(p)?;
    }
    manifest.record_artifact(&model_path);
    manifest.record_artifact(&curve_path);
    manifest.save(&manifest_path(&args.out_dir, "train"))?;

    match out.curve.last() {
        Some(last) => {
            let holdout = last
                .holdout_loss
                .map(|h| format!(", holdout loss {h:.6}"))
                .unwrap_or_default();
            println!(
                "trained {} epochs on {} windows; train loss {:.6}{holdout}",
                out.curve.len(),
                train_samples.len(),
                last.train_loss
            );
        }
        None => println!("trained 0 epochs on {} windows", train_samples.len()),
    }
    Ok(())
}

fn predict(args: &PredictArgs, argv: &[String]) -> Result<()> {
    let model_path = require(&args.model, "a model file (--model)")?;
    if args.horizon == 0 {
        return Err(Error::Config("horizon must be at least 1 frame".into()));
    }
    let model = load_model(model_path)?;
    let observed = load_trajectory_csv(&args.observed)?;
    let skel = load_skel_or_default(&args.skeleton)?;

    let delta = DeltaInput::zeros(args.horizon, observed.dim());
    let result = rollout(&model, &observed, &delta, args.horizon)?;
    let prediction = Trajectory::new(observed.frame_rate, observed.layout, result.states)?;

    fs::create_dir_all(&args.out_dir)?;
    let pred_path = args.out_dir.join("prediction.csv");
    save_trajectory_csv(&pred_path, &prediction, Some(&skel))?;

    let mut manifest = RunManifest::new("predict", argv.to_vec());
    manifest.record_input(model_path)?;
    manifest.record_input(&args.observed)?;
    if let Some(p) = &args.skeleton {
        manifest.record_input(p)?;
    }
    manifest.record_artifact(&pred_path);
    manifest.save(&manifest_path(&args.out_dir, "predict"))?;

    println!(
        "predicted {} frames to {}",
        prediction.frames.len(),
        pred_path.display()
    );
    Ok(())
}

fn optimize(args: &OptimizeArgs, argv: &[String]) -> Result<()> {
    let model_path = require(&args.model, "a model file (--model)")?;
    let objective_path = require(&args.objective, "an objective file (--objective)")?;
    let model = load_model(model_path)?;
    let observed = load_trajectory_csv(&args.observed)?;
    let skel = load_skel_or_default(&args.skeleton)?;
    let (spec, solver) = load_objective(objective_path)?;

    let result = optimize_prediction(&model, &skel, &observed, &spec, &solver)?;

    fs::create_dir_all(&args.out_dir)?;
    let pred_path = args.out_dir.join("prediction.csv");
    let record_path = args.out_dir.join("record.json");
    let trace_path = args.out_dir.join("trace.csv");
    save_trajectory_csv(&pred_path, &result.prediction, Some(&skel))?;
    save_trace_csv(&trace_path, &result.trace)?;
    let iterations = result.trace.len();
    save_record(
        &record_path,
        &OptimizationRecord {
            objective: result.objective,
            termination: result.termination,
            trace: result.trace,
        },
    )?;

    let mut manifest = RunManifest::new("optimize", argv.to_vec());
    manifest.record_input(model_path)?;
    manifest.record_input(&args.observed)?;
    record_objective_inputs(&mut manifest, objective_path)?;
    if let Some(p) = &args.skeleton {
        manifest.record_input(p)?;
    }
    for p in [&pred_path, &record_path, &trace_path] {
        manifest.record_artifact(p);
    }
    manifest.save(&manifest_path(&args.out_dir, "optimize"))?;

    println!(
        "objective {:.6} ({:?}) after {iterations} accepted iterations",
        result.objective, result.termination
    );
    Ok(())
}

/// Reads a robot warm start: the planned steps, one per frame. The
/// fixed start position comes from the flag, mirroring how the planned
/// robot.csv is written.
fn load_robot_steps(path: &Path, start: Vector3<f64>) -> Result<RobotTrajectory> {
    let traj = load_trajectory_csv(path)?;
    if traj.layout != StateLayout::RobotBase {
        return Err(Error::Config(format!(
            "{} is not a robot trajectory",
            path.display()
        )));
    }
    let steps = traj
        .frames
        .iter()
        .map(|f| f.fixed_rows::<3>(0).into())
        .collect();
    Ok(RobotTrajectory { start, steps })
}

fn plan_joint(args: &PlanJointArgs, argv: &[String]) -> Result<()> {
    let model_path = require(&args.model, "a model file (--model)")?;
    let objective_path = require(&args.objective, "an objective file (--objective)")?;
    let model = load_model(model_path)?;
    let observed = load_trajectory_csv(&args.observed)?;
    let skel = load_skel_or_default(&args.skeleton)?;
    let (spec, solver) = load_objective(objective_path)?;
    let robot_start = Vector3::from(args.robot_start);
    let robot_init = match &args.robot_init {
        Some(p) => Some(load_robot_steps(p, robot_start)?),
        None => None,
    };

    let problem = JointProblem {
        model: &model,
        skeleton: &skel,
        observed: &observed,
        spec: &spec,
        robot_start,
        robot_init,
    };
    let result = optimize_joint(&problem, &solver)?;
    let robot = result
        .robot
        .expect("joint optimization always plans a robot path");
    let robot_frames = robot
        .steps
        .iter()
        .map(|p| DVector::from_column_slice(p.as_slice()))
        .collect();
    let robot_traj = Trajectory::new(observed.frame_rate, StateLayout::RobotBase, robot_frames)?;

    fs::create_dir_all(&args.out_dir)?;
    let pred_path = args.out_dir.join("prediction.csv");
    let robot_path = args.out_dir.join("robot.csv");
    let record_path = args.out_dir.join("record.json");
    let trace_path = args.out_dir.join("trace.csv");
    save_trajectory_csv(&pred_path, &result.prediction, Some(&skel))?;
    save_trajectory_csv(&robot_path, &robot_traj, None)?;
    save_trace_csv(&trace_path, &result.trace)?;
    save_record(
        &record_path,
        &OptimizationRecord {
            objective: result.objective,
            termination: result.termination,
            trace: result.trace,
        },
    )?;

    let mut manifest = RunManifest::new("plan-joint", argv.to_vec());
    manifest.record_input(model_path)?;
    manifest.record_input(&args.observed)?;
    record_objective_inputs(&mut manifest, objective_path)?;
    if let Some(p) = &args.skeleton {
        manifest.record_input(p)?;
    }
    if let Some(p) = &args.robot_init {
        manifest.record_input(p)?;
    }
    for p in [&pred_path, &robot_path, &record_path, &trace_path] {
        manifest.record_artifact(p);
    }
    manifest.save(&manifest_path(&args.out_dir, "plan-joint"))?;

    println!(
        "planned {} human and {} robot frames under {}",
        result.prediction.frames.len(),
        robot_traj.frames.len(),
        args.out_dir.display()
    );
    Ok(())
}

/// Reads an objective file as a per-window template. Validation of the
/// assembled spec is deferred: the goal and horizon are filled in per
/// evaluation window.
fn eval_objective_template(path: &Path) -> Result<(ObjectiveSpec, LbfgsConfig)> {
    let doc: ObjectiveDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    let scene = match &doc.scene_file {
        Some(rel) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            load_scene(&base.join(rel))?
        }
        None => Scene::empty(),
    };
    doc.optimizer.validate()?;
    Ok((
        ObjectiveSpec {
            weights: doc.weights,
            alpha: doc.alpha,
            human_goal: doc.human_goal,
            human_point: doc.human_point,
            robot_goal: doc.robot_goal,
            scene,
            horizon: doc.horizon,
            smoothness: doc.smoothness,
        },
        doc.optimizer,
    ))
}

/// Refines each window's prediction toward the ground-truth final goal
/// position of the tracked end effector.
fn optimized_predictions(
    model: &PredictorModel,
    skel: &Skeleton,
    observed: &[Trajectory],
    truths: &[Trajectory],
    args: &EvalArgs,
    horizon: usize,
) -> Result<Vec<Trajectory>> {
    let goal_index = skel.end_effector_index(&args.goal_joint)?;
    let (mut spec, solver) = match &args.objective {
        Some(path) => eval_objective_template(path)?,
        None => (
            ObjectiveSpec {
                weights: CostWeights {
                    delta: 1e-2,
                    goal: 1.0,
                    obstacle: 0.0,
                    robot_goal: 0.0,
                    robot_obstacle: 0.0,
                    smooth: 0.0,
                    interaction: 0.0,
                },
                human_point: HumanPoint::EndEffector {
                    name: args.goal_joint.clone(),
                },
                ..ObjectiveSpec::default()
            },
            LbfgsConfig::default(),
        ),
    };
    spec.horizon = horizon;

    let mut out = Vec::with_capacity(observed.len());
    for (obs, truth) in observed.iter().zip(truths) {
        let last = truth.frames.last().ok_or(Error::TooShort { needed: 1, got: 0 })?;
        let goal = fk_positions(skel, last)?.positions[goal_index];
        spec.human_goal = Some([goal.x, goal.y, goal.z]);
        out.push(optimize_prediction(model, skel, obs, &spec, &solver)?.prediction);
    }
    Ok(out)
}

/// Mean distance of the straight-line wrist path to the true wrist at
/// each horizon. Only defined for a single tracked joint.
fn interp_errors(
    observed: &[Trajectory],
    truths: &[Trajectory],
    skel: &Skeleton,
    joint: &str,
    horizons_ms: &[u32],
) -> Result<Vec<f64>> {
    let idx = skel.end_effector_index(joint)?;
    let mut sums = vec![0.0; horizons_ms.len()];
    for (obs, truth) in observed.iter().zip(truths) {
        let last_obs = obs.frames.last().ok_or(Error::TooShort { needed: 1, got: 0 })?;
        let last_truth = truth
            .frames
            .last()
            .ok_or(Error::TooShort { needed: 1, got: 0 })?;
        let start = fk_positions(skel, last_obs)?.positions[idx];
        let goal = fk_positions(skel, last_truth)?.positions[idx];
        let path = interpolation_baseline(&start, &goal, truth.frames.len());
        for (k, &ms) in horizons_ms.iter().enumerate() {
            let h = horizon_frames(ms, truth.frame_rate)?;
            if h > truth.frames.len() {
                return Err(Error::TooShort {
                    needed: h,
                    got: truth.frames.len(),
                });
            }
            let p_true = fk_positions(skel, &truth.frames[h - 1])?.positions[idx];
            sums[k] += (path[h - 1] - p_true).norm();
        }
    }
    Ok(sums.iter().map(|s| s / observed.len() as f64).collect())
}

fn eval(args: &EvalArgs, argv: &[String]) -> Result<()> {
    if args.optimized && args.model.is_none() {
        return Err(Error::Config("--optimized needs --model".into()));
    }
    let skel = load_skel_or_default(&args.skeleton)?;
    let inputs = dataset_files(&args.data_dir)?;
    let data = load_dataset(&args.data_dir)?;
    if data.is_empty() {
        return Err(Error::Config(format!(
            "no traj_*.csv files under {}",
            args.data_dir.display()
        )));
    }
    if data[0].dim() != skel.state_dim() {
        return Err(Error::Dimension {
            context: "evaluation dataset state",
            expected: skel.state_dim(),
            actual: data[0].dim(),
        });
    }
    let frame_rate = data[0].frame_rate;

    let mut window = TrainingConfig {
        slice_seconds: args.slice_seconds,
        input_seconds: args.input_seconds,
        frame_rate,
        ..TrainingConfig::default()
    };
    window.stride = match args.stride {
        Some(s) => s,
        None => window.window_frames()?,
    };
    let (mut samples, _short) = slice_dataset(&data, &window)?;
    if let Some(cap) = args.max_samples {
        samples.truncate(cap);
    }
    if samples.is_empty() {
        return Err(Error::Config(
            "dataset yields no evaluation windows; trajectories are shorter than the slice".into(),
        ));
    }
    let horizon = samples[0].targets().len();

    let mut observed = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for s in &samples {
        observed.push(Trajectory::new(frame_rate, s.layout, s.observed().to_vec())?);
        truths.push(Trajectory::new(frame_rate, s.layout, s.targets().to_vec())?);
    }

    let horizons = args.horizons_ms.clone().unwrap_or_else(default_horizons_ms);
    let joints = if args.wrist_only {
        vec![skel.end_effector_index(&args.goal_joint)?]
    } else {
        skel.key_joint_indices()
    };

    let mut report = EvalReport::new(horizons.clone());
    let zerovel: Vec<Trajectory> = observed
        .iter()
        .map(|o| zero_velocity_baseline(o, horizon))
        .collect::<Result<_>>()?;
    report.push_row("zerovel", evaluate(&zerovel, &truths, &skel, &joints, &horizons)?)?;

    if args.wrist_only {
        report.push_row(
            "interp",
            interp_errors(&observed, &truths, &skel, &args.goal_joint, &horizons)?,
        )?;
    }

    if let Some(model_path) = &args.model {
        let model = load_model(model_path)?;
        let preds: Vec<Trajectory> = observed
            .iter()
            .map(|o| {
                let delta = DeltaInput::zeros(horizon, o.dim());
                let r = rollout(&model, o, &delta, horizon)?;
                Trajectory::new(o.frame_rate, o.layout, r.states)
            })
            .collect::<Result<_>>()?;
        report.push_row("model", evaluate(&preds, &truths, &skel, &joints, &horizons)?)?;

        if args.optimized {
            let preds = optimized_predictions(&model, &skel, &observed, &truths, args, horizon)?;
            report.push_row(
                "optimized",
                evaluate(&preds, &truths, &skel, &joints, &horizons)?,
            )?;
        }
    }

    fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("report.csv");
    let csv = report.to_csv_string();
    fs::write(&report_path, &csv)?;
    print!("{csv}");

    let mut manifest = RunManifest::new("eval", argv.to_vec());
    for p in &inputs {
        manifest.record_input(p)?;
    }
    if let Some(p) = &args.model {
        manifest.record_input(p)?;
    }
    if let Some(p) = &args.objective {
        record_objective_inputs(&mut manifest, p)?;
    }
    if let Some(p) = &args.skeleton {
        manifest.record_input(p)?;
    }
    manifest.record_artifact(&report_path);
    manifest.save(&manifest_path(&args.out_dir, "eval"))?;
    Ok(())
}

fn trace_export(args: &TraceExportArgs, argv: &[String]) -> Result<()> {
    let record = load_record(&args.record)?;

    fs::create_dir_all(&args.out_dir)?;
    let trace_path = args.out_dir.join("trace.csv");
    save_trace_csv(&trace_path, &record.trace)?;

    let mut manifest = RunManifest::new("trace-export", argv.to_vec());
    manifest.record_input(&args.record)?;
    manifest.record_artifact(&trace_path);
    manifest.save(&manifest_path(&args.out_dir, "trace-export"))?;

    println!(
        "exported {} iterations to {}",
        record.trace.len(),
        trace_path.display()
    );
    Ok(())
}

/// Reruns the argv a manifest recorded. The replayed command rewrites
/// its artifacts, manifest included; with unchanged inputs the outputs
/// are byte-identical.
fn replay(args: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    if manifest.command == "replay" {
        return Err(Error::Config("manifest records a replay; nothing to rerun".into()));
    }
    let parsed = Cli::try_parse_from(
        std::iter::once("mfo".to_owned()).chain(manifest.argv.iter().cloned()),
    )
    .map_err(|e| Error::Config(format!("manifest argv does not parse: {e}")))?;
    run(parsed.command, manifest.argv)
}
