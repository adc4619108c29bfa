use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{train, TrainOptions};
use crate::error::{Error, Result};
use crate::eval::mean_stderr;
use crate::jobs::run_jobs;

pub const DEFAULT_SEEDS: [u64; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub run_id: String,
    pub absrel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub runs: Vec<SeedRun>,
    pub mean: f64,
    pub stderr: f64,
}

impl SeedReport {
    pub fn from_runs(runs: Vec<SeedRun>) -> Result<Self> {
        let values: Vec<f64> = runs.iter().map(|r| r.absrel).collect();
        let (mean, stderr) = mean_stderr(&values)?;
        Ok(SeedReport { runs, mean, stderr })
    }
}

/// Trains `config` once per seed under `out_root/seed-<s>` and aggregates
/// the test AbsRel.
pub fn run_seeds(
    config: &TrainConfig,
    seeds: &[u64],
    out_root: impl AsRef<Path>,
    opts: &TrainOptions,
    jobs: usize,
) -> Result<SeedReport> {
    if seeds.len() < 2 {
        return Err(Error::invalid("standard error needs at least 2 seeds"));
    }
    if config.eval_manifest.is_none() {
        return Err(Error::Config("run_seeds needs eval_manifest".into()));
    }
    config.validate()?;
    let root = out_root.as_ref();
    let runs = run_jobs(jobs, seeds.len(), |i| {
        let seed = seeds[i];
        let run_id = format!("seed-{seed}");
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let record = train(&cfg, root.join(&run_id), opts)?;
        let absrel = record.eval.expect("eval manifest set").absrel;
        Ok(SeedRun { seed, run_id, absrel })
    })?;
    SeedReport::from_runs(runs)
}
