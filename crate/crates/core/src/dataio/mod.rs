//! Datasets, baselines, evaluation, and every on-disk format.
//!
//! The recorded-motion corpora this kind of predictor is usually
//! trained on are not redistributable, so [`synthetic`] generates
//! seeded stand-in motion. [`eval`] holds the reference baselines and
//! the horizon-sweep metric, [`files`] the file formats the command
//! line speaks.

pub mod eval;
pub mod files;
pub mod synthetic;

pub use eval::{
    default_horizons_ms, evaluate, horizon_frames, interpolation_baseline, obstacle_horizons_ms,
    zero_velocity_baseline, EvalReport, EvalRow,
};
pub use files::{
    content_hash, load_dataset, load_objective, load_record, load_scene, load_skeleton,
    load_trajectory_csv, save_dataset, save_loss_curve_csv, save_objective, save_record,
    save_scene, save_skeleton, save_trace_csv, save_trajectory_csv, ObjectiveDoc,
    OptimizationRecord, RunManifest, TrajectoryMeta,
};
pub use synthetic::{generate_synthetic, min_jerk, GeneratorKind, SyntheticSpec};
