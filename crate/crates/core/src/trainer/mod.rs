//! Baseline and alternating joint training, ablations, checkpoints and
//! multi-seed aggregation.

mod config;
mod data;
mod run;
mod seeds;
mod step;

pub use config::{MomentSharing, TrainConfig, TrainMode, DEFAULT_ALPHA};
pub use run::{
    load_checkpoint_model, load_run_model, read_log, train, train_baseline, train_joint, CheckpointHeader,
    OptimizerState, RunRecord, TrainOptions, CHECKPOINT_FILE, CONFIG_FILE, EVAL_FILE, FINAL_CHECKPOINT, LOG_FILE,
    LOG_HEADER, TIMING_FILE,
};
pub use seeds::{run_seeds, SeedReport, SeedRun, DEFAULT_SEEDS};
pub use step::{apply_phase, joint_step, PhaseParams, PhaseRecord};
