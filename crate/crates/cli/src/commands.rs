use std::fs;
use std::path::Path;

use auxstep::data_io::{mldc_export as export_presence, DatasetManifest};
use auxstep::eval::{error_diff_map, evaluate, sample_error_map, ErrorMap};
use auxstep::experiment::{self, ExperimentSpec};
use auxstep::model::TaskKind;
use auxstep::synthgen::{self, SceneSpec};
use auxstep::trainer::{self, load_run_model, TrainConfig, TrainOptions};
use auxstep::{Error, Result};

use crate::reports;
use crate::{EfficiencyArgs, EvalArgs, ExperimentArgs, ExportArgs, GenDataArgs, PlotArgs, SweepArgs, TrainArgs};

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Makes `dir` an empty directory, clearing it only under `force`.
fn claim_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(config_error(format!("{} is a file", dir.display())));
    }
    if dir.exists() && io(dir, fs::read_dir(dir))?.next().is_some() {
        if !force {
            return Err(config_error(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        io(dir, fs::remove_dir_all(dir))?;
    }
    io(dir, fs::create_dir_all(dir))
}

fn claim_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(config_error(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => io(p, fs::create_dir_all(p)),
        _ => Ok(()),
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = SceneSpec {
        height: a.height,
        width: a.width,
        num_classes: a.classes,
        ..SceneSpec::default()
    };
    match a.invalid_frac[..] {
        [] => {}
        [f] => (spec.invalid_min, spec.invalid_max) = (f, f),
        [lo, hi] => (spec.invalid_min, spec.invalid_max) = (lo, hi),
        _ => unreachable!("clap limits the value count"),
    }
    spec.validate()?;
    if a.scenes == 0 {
        return Err(config_error("--scenes must be positive"));
    }
    let n_train = (a.train_frac * a.scenes as f64).round();
    if !(a.train_frac > 0.0 && a.train_frac < 1.0) || n_train < 1.0 || n_train >= a.scenes as f64 {
        return Err(config_error(format!(
            "--train-frac {} of {} scenes leaves an empty split",
            a.train_frac, a.scenes
        )));
    }
    claim_dir(&a.out, a.force)?;
    let all = synthgen::generate(&spec, a.scenes, a.seed, &a.out, a.jobs)?;
    let (train, test) = synthgen::split(&all, a.train_frac, a.seed)?;
    train.save(a.out.join("train.json"))?;
    test.save(a.out.join("test.json"))?;
    println!(
        "generated {} scenes in {} ({} train, {} test)",
        all.len(),
        a.out.display(),
        train.len(),
        test.len()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let text = io(&a.config, fs::read_to_string(&a.config))?;
    let mut config = TrainConfig::from_toml(&text)?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
    if !table.contains_key("seed") {
        config.seed = a.seed.unwrap_or(0);
    }
    config.validate()?;
    let opts = TrainOptions {
        resume: a.resume,
        overwrite: a.force,
        stop_after: a.stop_after,
    };
    let record = trainer::train(&config, &a.out, &opts)?;
    let state = if record.completed { "completed" } else { "stopped" };
    println!(
        "{state} {} of {} steps in {:.1}s; log {}",
        record.step,
        config.total_steps,
        record.wall_clock_secs,
        a.out.join(trainer::LOG_FILE).display()
    );
    if let Some(eval) = record.eval {
        println!("absrel {:.6} on {} ({} images)", eval.absrel, eval.dataset, eval.n_images);
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    claim_file(&a.out, a.force)?;
    let (model, header) = load_run_model(&a.run)?;
    let manifest = DatasetManifest::load(&a.test_manifest)?;
    let samples = manifest.load_all::<f64>()?;
    let report = evaluate(&model, &samples, &manifest.name, Some(header.config.seed))?;
    if let Some(dir) = &a.error_maps {
        claim_dir(dir, a.force)?;
        for s in &samples {
            sample_error_map(&model, s)?.save(dir.join(format!("{}.json", s.id)))?;
        }
    }
    report.save(&a.out)?;
    println!("absrel {:.6} on {} ({} images)", report.absrel, report.dataset, report.n_images);
    Ok(())
}

fn load_experiment(a: &ExperimentArgs) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(&a.config)?;
    if let Some(seeds) = &a.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(out) = &a.out {
        spec.out = out.clone();
    }
    Ok(spec)
}

pub fn sweep_alpha(a: SweepArgs) -> Result<()> {
    let mut spec = load_experiment(&a.common)?;
    if let Some(alphas) = a.alphas {
        spec.alphas = alphas;
    }
    if let Some(tasks) = a.task {
        spec.tasks = tasks.iter().map(|t| t.parse()).collect::<Result<Vec<TaskKind>>>()?;
    }
    let result = experiment::sweep_alpha(&spec, a.common.force, a.common.jobs)?;
    print!("{}", experiment::sweep_csv(&result));
    println!(
        "baseline {:.6} +- {:.6}; {} runs in {}",
        result.baseline.mean,
        result.baseline.stderr,
        result.runs,
        spec.out.display()
    );
    Ok(())
}

pub fn data_efficiency(a: EfficiencyArgs) -> Result<()> {
    let mut spec = load_experiment(&a.common)?;
    if let Some(fractions) = a.fractions {
        spec.fractions = fractions;
    }
    let result = experiment::data_efficiency(&spec, a.common.force, a.common.jobs)?;
    print!("{}", experiment::efficiency_csv(&result));
    println!("{} runs in {}", result.runs, spec.out.display());
    Ok(())
}

pub fn mldc_export(a: ExportArgs) -> Result<()> {
    let seg = DatasetManifest::load(&a.seg_manifest)?;
    claim_dir(&a.out, a.force)?;
    let out = export_presence(&seg, &a.out)?;
    println!(
        "exported {} samples to {} ({} excluded)",
        out.len(),
        a.out.display(),
        out.excluded.len()
    );
    Ok(())
}

pub fn plot(a: PlotArgs) -> Result<()> {
    claim_file(&a.out, a.force)?;
    if let Some(pair) = &a.diff {
        let (base, ours) = (ErrorMap::load(&pair[0])?, ErrorMap::load(&pair[1])?);
        error_diff_map(&base, &ours)?.write_ppm(&a.out)?;
        println!("wrote {}", a.out.display());
        return Ok(());
    }
    let mut chart = reports::chart(&a.reports)?;
    if let Some(title) = a.title {
        chart.title = title;
    }
    chart.save(&a.out)?;
    println!("wrote {} ({} series)", a.out.display(), chart.series.len());
    Ok(())
}
