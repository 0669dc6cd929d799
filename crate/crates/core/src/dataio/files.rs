//! On-disk formats: trajectory CSV with a JSON sidecar, JSON configs
//! for skeletons, scenes and objectives, CSV exports for loss curves
//! and solver traces, and the run manifest that ties a result to the
//! exact inputs that produced it.

use crate::costs::{CostWeights, HumanPoint, ObjectiveSpec, SmoothnessVariant};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, StateLayout, Trajectory};
use crate::optimizer::{LbfgsConfig, Termination, TraceEntry};
use crate::scene::Scene;
use crate::training::EpochStats;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Sidecar carried next to every trajectory CSV; the CSV alone cannot
/// say how fast it plays or how its columns group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub frame_rate: f64,
    pub layout: StateLayout,
}

/// `foo.csv` -> `foo.meta.json`.
fn meta_path(path: &Path) -> PathBuf {
    let mut stem = path.file_stem().unwrap_or_default().to_os_string();
    stem.push(".meta.json");
    path.with_file_name(stem)
}

fn human_headers(skel: &Skeleton) -> Vec<String> {
    let mut h = vec![
        "time_s".into(),
        "base_pos_x".into(),
        "base_pos_y".into(),
        "base_pos_z".into(),
        "base_rot_x".into(),
        "base_rot_y".into(),
        "base_rot_z".into(),
    ];
    for j in skel.joints() {
        for axis in ["x", "y", "z"] {
            h.push(format!("joint_{}_{axis}", j.name));
        }
    }
    h
}

/// Writes the CSV and its sidecar. Human trajectories need the
/// skeleton for column names; robot trajectories pass `None`.
pub fn save_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    skel: Option<&Skeleton>,
) -> Result<()> {
    let headers: Vec<String> = match (traj.layout, skel) {
        (StateLayout::Human { joints }, Some(s)) => {
            if s.n_joints() != joints {
                return Err(Error::Dimension {
                    context: "trajectory skeleton",
                    expected: joints,
                    actual: s.n_joints(),
                });
            }
            human_headers(s)
        }
        (StateLayout::Human { .. }, None) => {
            return Err(Error::Config(
                "human trajectories need a skeleton for column names".into(),
            ))
        }
        (StateLayout::RobotBase, _) => vec![
            "time_s".into(),
            "base_pos_x".into(),
            "base_pos_y".into(),
            "base_pos_z".into(),
        ],
    };

    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    w.write_record(&headers)?;
    for (t, frame) in traj.frames.iter().enumerate() {
        let mut record = Vec::with_capacity(frame.len() + 1);
        record.push(format_f64(t as f64 / traj.frame_rate));
        record.extend(frame.iter().map(|&v| format_f64(v)));
        w.write_record(&record)?;
    }
    w.flush()?;

    let meta = TrajectoryMeta {
        frame_rate: traj.frame_rate,
        layout: traj.layout,
    };
    write_json(&meta_path(path), &meta)
}

/// Shortest decimal that round-trips the exact f64; the std Display
/// implementation guarantees this.
fn format_f64(v: f64) -> String {
    format!("{v}")
}

pub fn load_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let meta: TrajectoryMeta = read_json(&meta_path(path))?;
    let dim = meta.layout.dim();
    let mut reader = csv::Reader::from_reader(BufReader::new(fs::File::open(path)?));
    let header_len = reader.headers()?.len();
    if header_len != dim + 1 {
        return Err(Error::Dimension {
            context: "trajectory csv columns",
            expected: dim + 1,
            actual: header_len,
        });
    }
    let mut frames = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut frame = DVector::zeros(dim);
        // Column 0 is time_s, recomputed from the sidecar on load.
        for (i, field) in record.iter().skip(1).enumerate() {
            frame[i] = field.parse::<f64>().map_err(|e| {
                Error::Config(format!("bad float '{field}' in {}: {e}", path.display()))
            })?;
        }
        frames.push(frame);
    }
    Trajectory::new(meta.frame_rate, meta.layout, frames)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(
        path,
    )?))?)
}

pub fn save_skeleton(path: &Path, skel: &Skeleton) -> Result<()> {
    write_json(path, skel)
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    read_json(path)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_json(path, scene)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    read_json(path)
}

/// The objective file: everything [`ObjectiveSpec`] holds except that
/// the scene is referenced by path (relative to the objective file),
/// plus the solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveDoc {
    pub weights: CostWeights,
    pub alpha: f64,
    pub human_goal: Option<[f64; 3]>,
    pub human_point: HumanPoint,
    pub robot_goal: Option<[f64; 3]>,
    pub scene_file: Option<String>,
    pub horizon: usize,
    pub smoothness: SmoothnessVariant,
    pub optimizer: LbfgsConfig,
}

impl Default for ObjectiveDoc {
    fn default() -> Self {
        let spec = ObjectiveSpec::default();
        ObjectiveDoc {
            weights: spec.weights,
            alpha: spec.alpha,
            human_goal: spec.human_goal,
            human_point: spec.human_point,
            robot_goal: spec.robot_goal,
            scene_file: None,
            horizon: spec.horizon,
            smoothness: spec.smoothness,
            optimizer: LbfgsConfig::default(),
        }
    }
}

pub fn save_objective(path: &Path, doc: &ObjectiveDoc) -> Result<()> {
    write_json(path, doc)
}

/// Loads the objective file, resolves its scene reference, and
/// validates the assembled spec.
pub fn load_objective(path: &Path) -> Result<(ObjectiveSpec, LbfgsConfig)> {
    let doc: ObjectiveDoc = read_json(path)?;
    let scene = match &doc.scene_file {
        Some(rel) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            load_scene(&base.join(rel))?
        }
        None => Scene::empty(),
    };
    let spec = ObjectiveSpec {
        weights: doc.weights,
        alpha: doc.alpha,
        human_goal: doc.human_goal,
        human_point: doc.human_point,
        robot_goal: doc.robot_goal,
        scene,
        horizon: doc.horizon,
        smoothness: doc.smoothness,
    };
    spec.validate()?;
    doc.optimizer.validate()?;
    Ok((spec, doc.optimizer))
}

pub fn save_loss_curve_csv(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    w.write_record(["epoch", "train_loss", "holdout_loss"])?;
    for e in curve {
        w.write_record([
            e.epoch.to_string(),
            format_f64(e.train_loss),
            e.holdout_loss.map(format_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace_csv(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    w.write_record(["iteration", "objective", "gradient_norm"])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            format_f64(t.objective),
            format_f64(t.gradient_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serializable summary of a solver run; the prediction and plan are
/// stored as trajectory files next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub objective: f64,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

pub fn save_record(path: &Path, record: &OptimizationRecord) -> Result<()> {
    write_json(path, record)
}

pub fn load_record(path: &Path) -> Result<OptimizationRecord> {
    read_json(path)
}

/// What a run read, what it wrote, and how to do it again. `replay`
/// reruns `argv`; config hashes detect silently edited inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Input path -> content fingerprint (FNV-1a 64, hex). Not
    /// cryptographic; catches accidental edits, not tampering.
    pub config_hashes: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        RunManifest {
            command: command.to_owned(),
            argv,
            seed: None,
            config_hashes: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.config_hashes
            .insert(path.display().to_string(), content_hash(path)?);
        Ok(())
    }

    pub fn record_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// FNV-1a 64 over the raw file bytes, lowercase hex.
pub fn content_hash(path: &Path) -> Result<String> {
    let mut f = BufReader::new(fs::File::open(path)?);
    let mut buf = [0u8; 8192];
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        for &b in &buf[..n] {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    Ok(format!("{hash:016x}"))
}

/// Writes one numbered CSV (plus sidecar) per trajectory and returns
/// the CSV paths in order.
pub fn save_dataset(
    dir: &Path,
    trajectories: &[Trajectory],
    skel: Option<&Skeleton>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(trajectories.len());
    for (i, traj) in trajectories.iter().enumerate() {
        let path = dir.join(format!("traj_{i:04}.csv"));
        save_trajectory_csv(&path, traj, skel)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Loads every `traj_*.csv` under `dir` in filename order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Trajectory>> {
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
    paths.iter().map(|p| load_trajectory_csv(p)).collect()
}
