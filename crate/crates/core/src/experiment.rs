//! Multi-run experiments: the alpha sweep and the data-efficiency grid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{subset_size, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::mean_stderr;
use crate::jobs::run_jobs;
use crate::model::TaskKind;
use crate::plot::{Chart, LineStyle, Point, Reference, Series};
use crate::trainer::{train, TrainConfig, TrainMode, TrainOptions, DEFAULT_ALPHA};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const BASELINE_CSV: &str = "baseline.csv";
pub const EFFICIENCY_CSV: &str = "data_efficiency.csv";
pub const EFFICIENCY_SVG: &str = "data_efficiency.svg";
pub const SPEC_FILE: &str = "experiment.toml";

/// A multi-run experiment. The `train` table is the template every run
/// starts from; sweep axes override its mode, alpha, task, fraction and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tasks: Vec<TaskKind>,
    pub out: PathBuf,
    pub train: TrainConfig,
}

fn default_seeds() -> Vec<u64> {
    crate::trainer::DEFAULT_SEEDS.to_vec()
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn check_common(&self) -> Result<()> {
        if self.seeds.len() < 2 {
            return Err(Error::Config("experiments need at least 2 seeds".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if self.train.eval_manifest.is_none() {
            return Err(Error::Config("experiments need train.eval_manifest".into()));
        }
        Ok(())
    }
}

/// Aggregate over seeds of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean: f64,
    pub stderr: f64,
    pub absrels: Vec<f64>,
}

impl CellSummary {
    fn new(absrels: Vec<f64>) -> Result<Self> {
        let (mean, stderr) = mean_stderr(&absrels)?;
        Ok(CellSummary { mean, stderr, absrels })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub task: TaskKind,
    pub alpha: f64,
    pub summary: CellSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub baseline: CellSummary,
    /// Sorted by task, then alpha ascending.
    pub rows: Vec<SweepRow>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub fraction: f64,
    pub baseline: CellSummary,
    pub joint: CellSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyResult {
    /// Sorted by fraction ascending.
    pub rows: Vec<EfficiencyRow>,
    pub runs: usize,
}

fn claim_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A run to execute: its directory and config.
struct Job {
    dir: PathBuf,
    config: TrainConfig,
}

fn execute(jobs: &[Job], parallel: usize) -> Result<Vec<f64>> {
    let opts = TrainOptions {
        overwrite: true,
        ..TrainOptions::default()
    };
    run_jobs(parallel, jobs.len(), |i| {
        let record = train(&jobs[i].config, &jobs[i].dir, &opts)?;
        Ok(record.eval.expect("eval manifest set").absrel)
    })
}

fn alpha_dir(alpha: f64) -> String {
    format!("alpha-{alpha}")
}

/// Trains every (task, alpha, seed) combination plus a baseline per seed.
///
/// Layout: `<out>/baseline/seed-<s>`, `<out>/<task>/alpha-<a>/seed-<s>`, and
/// `sweep.csv`, `baseline.csv`, `experiment.toml` and one `sweep_<task>.svg`
/// per task at the top level.
pub fn sweep_alpha(spec: &ExperimentSpec, force: bool, parallel: usize) -> Result<SweepResult> {
    spec.check_common()?;
    if spec.alphas.is_empty() || spec.tasks.is_empty() {
        return Err(Error::Config("the sweep needs at least one alpha and one task".into()));
    }
    let mut alphas = spec.alphas.clone();
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Config("alphas must lie in [0, 1]".into()));
    }
    alphas.sort_by(f64::total_cmp);
    if alphas.windows(2).any(|w| alpha_dir(w[0]) == alpha_dir(w[1])) {
        return Err(Error::Config("duplicate alphas would share a run directory".into()));
    }
    let mut tasks = spec.tasks.clone();
    tasks.sort_by_key(|t| t.name());
    tasks.dedup();
    if tasks.contains(&TaskKind::Depth) {
        return Err(Error::Config("depth is not an auxiliary task".into()));
    }
    let base = TrainConfig {
        mode: TrainMode::Baseline,
        alpha: None,
        beta: None,
        gamma: None,
        ..spec.train.clone()
    };
    base.validate()?;
    let mut jobs = Vec::new();
    for &seed in &spec.seeds {
        jobs.push(Job {
            dir: spec.out.join("baseline").join(format!("seed-{seed}")),
            config: TrainConfig { seed, ..base.clone() },
        });
    }
    for &task in &tasks {
        for &alpha in &alphas {
            for &seed in &spec.seeds {
                let config = TrainConfig {
                    mode: TrainMode::Joint,
                    alpha: Some(alpha),
                    aux_task: task,
                    seed,
                    ..base.clone()
                };
                config.validate()?;
                jobs.push(Job {
                    dir: spec.out.join(task.name()).join(alpha_dir(alpha)).join(format!("seed-{seed}")),
                    config,
                });
            }
        }
    }
    claim_out_dir(&spec.out, force)?;
    write_text(&spec.out.join(SPEC_FILE), &spec.to_toml()?)?;
    let results = execute(&jobs, parallel)?;
    let n = spec.seeds.len();
    let baseline = CellSummary::new(results[..n].to_vec())?;
    let mut rows = Vec::new();
    let mut offset = n;
    for &task in &tasks {
        for &alpha in &alphas {
            rows.push(SweepRow {
                task,
                alpha,
                summary: CellSummary::new(results[offset..offset + n].to_vec())?,
            });
            offset += n;
        }
    }
    let result = SweepResult {
        baseline,
        rows,
        runs: jobs.len(),
    };
    write_text(&spec.out.join(SWEEP_CSV), &sweep_csv(&result))?;
    write_text(
        &spec.out.join(BASELINE_CSV),
        &format!(
            "mean_absrel,stderr,n_seeds\n{},{},{}\n",
            result.baseline.mean,
            result.baseline.stderr,
            result.baseline.absrels.len()
        ),
    )?;
    for &task in &tasks {
        sweep_chart(&result, task).save(spec.out.join(format!("sweep_{}.svg", task.name())))?;
    }
    Ok(result)
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut s = String::from("task,alpha,mean_absrel,stderr,n_seeds\n");
    for r in &result.rows {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.task.name(),
            r.alpha,
            r.summary.mean,
            r.summary.stderr,
            r.summary.absrels.len()
        )
        .unwrap();
    }
    s
}

/// AbsRel against alpha for one task, with the baseline as a reference band.
pub fn sweep_chart(result: &SweepResult, task: TaskKind) -> Chart {
    Chart {
        title: format!("AbsRel vs alpha ({})", task.name()),
        x_label: "alpha".into(),
        y_label: "AbsRel".into(),
        log_x: false,
        series: vec![Series {
            label: task.name().into(),
            points: result
                .rows
                .iter()
                .filter(|r| r.task == task)
                .map(|r| Point {
                    x: r.alpha,
                    y: r.summary.mean,
                    err: r.summary.stderr,
                })
                .collect(),
            style: LineStyle::Solid,
        }],
        reference: Some(Reference {
            label: "baseline".into(),
            y: result.baseline.mean,
            err: result.baseline.stderr,
        }),
    }
}

/// Baseline and joint (alpha 0.9 by default, MLDC by default) runs for every
/// depth-data fraction and seed.
///
/// Writes `data_efficiency.csv` sorted by fraction and a two-curve
/// `data_efficiency.svg`.
pub fn data_efficiency(spec: &ExperimentSpec, force: bool, parallel: usize) -> Result<EfficiencyResult> {
    spec.check_common()?;
    if spec.fractions.is_empty() {
        return Err(Error::Config("need at least one fraction".into()));
    }
    let mut fractions = spec.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let depth = DatasetManifest::load(&spec.train.depth_manifest)?;
    for &f in &fractions {
        subset_size(depth.len(), f).map_err(|e| Error::Config(e.to_string()))?;
    }
    let alpha = spec.train.alpha.unwrap_or(DEFAULT_ALPHA);
    let aux_task = spec.tasks.first().copied().unwrap_or(TaskKind::Mldc);
    let base = TrainConfig {
        mode: TrainMode::Baseline,
        alpha: None,
        beta: None,
        gamma: None,
        ..spec.train.clone()
    };
    let mut jobs = Vec::new();
    for &fraction in &fractions {
        for (method, mode) in [("baseline", TrainMode::Baseline), ("joint", TrainMode::Joint)] {
            for &seed in &spec.seeds {
                let mut config = TrainConfig {
                    depth_fraction: fraction,
                    seed,
                    mode,
                    ..base.clone()
                };
                if mode == TrainMode::Joint {
                    config.alpha = Some(alpha);
                    config.aux_task = aux_task;
                }
                config.validate()?;
                jobs.push(Job {
                    dir: spec
                        .out
                        .join(format!("fraction-{fraction}"))
                        .join(method)
                        .join(format!("seed-{seed}")),
                    config,
                });
            }
        }
    }
    claim_out_dir(&spec.out, force)?;
    write_text(&spec.out.join(SPEC_FILE), &spec.to_toml()?)?;
    let results = execute(&jobs, parallel)?;
    let n = spec.seeds.len();
    let rows = fractions
        .iter()
        .enumerate()
        .map(|(i, &fraction)| {
            let at = 2 * n * i;
            Ok(EfficiencyRow {
                fraction,
                baseline: CellSummary::new(results[at..at + n].to_vec())?,
                joint: CellSummary::new(results[at + n..at + 2 * n].to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = EfficiencyResult { rows, runs: jobs.len() };
    write_text(&spec.out.join(EFFICIENCY_CSV), &efficiency_csv(&result))?;
    efficiency_chart(&result).save(spec.out.join(EFFICIENCY_SVG))?;
    Ok(result)
}

pub fn efficiency_csv(result: &EfficiencyResult) -> String {
    let mut s = String::from("fraction,method,mean_absrel,stderr,n_seeds\n");
    for r in &result.rows {
        for (method, c) in [("baseline", &r.baseline), ("joint", &r.joint)] {
            writeln!(s, "{},{method},{},{},{}", r.fraction, c.mean, c.stderr, c.absrels.len()).unwrap();
        }
    }
    s
}

pub fn efficiency_chart(result: &EfficiencyResult) -> Chart {
    let curve = |label: &str, pick: fn(&EfficiencyRow) -> &CellSummary, style| Series {
        label: label.into(),
        points: result
            .rows
            .iter()
            .map(|r| Point {
                x: r.fraction,
                y: pick(r).mean,
                err: pick(r).stderr,
            })
            .collect(),
        style,
    };
    Chart {
        title: "AbsRel vs fraction of depth data".into(),
        x_label: "fraction of depth training data".into(),
        y_label: "AbsRel".into(),
        log_x: true,
        series: vec![
            curve("baseline", |r| &r.baseline, LineStyle::Dashed),
            curve("joint", |r| &r.joint, LineStyle::Solid),
        ],
        reference: None,
    }
}
