use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{MomentSharing, TrainConfig};
use super::data::{batch_objective, depth_manifest, load_manifest, prepare_aux, prepare_depth, AuxSet, Prepared};
use super::step::{apply_phase, joint_step, PhaseParams, PhaseRecord};
use crate::data_io::{BatchStream, Container, MixState, MixedAuxSource, StoredTensor, StreamState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{HeadSpec, Model, ModelConfig, ParamId, ParamStore, DEPTH_HEAD};
use crate::optim::{AdamW, Moments, Phase};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "steps.csv";
pub const LOG_HEADER: &str = "step,phase,loss,decoder_lr,head_lr";
/// Latest resumable state.
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
/// State after the last step.
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TIMING_FILE: &str = "timing.json";
pub const EVAL_FILE: &str = "eval.json";

const CHECKPOINT_KIND: &str = "auxstep-run";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from `checkpoint.ckpt` when the run directory has one.
    pub resume: bool,
    /// Replace an existing run directory.
    pub overwrite: bool,
    /// Stop (with a checkpoint) once this many global steps are done.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_dir: PathBuf,
    pub config: TrainConfig,
    /// Every logged phase, including those from before a resume.
    pub log: Vec<PhaseRecord<f64>>,
    /// Global steps completed.
    pub step: usize,
    pub completed: bool,
    /// Time spent in this invocation.
    pub wall_clock_secs: f64,
    pub checkpoint: PathBuf,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub name: String,
    pub step: u64,
    pub params: Vec<String>,
}

/// JSON header of a run checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub step: usize,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub heads: Vec<HeadSpec>,
    pub encoder_fingerprint: String,
    pub depth_stream: StreamState,
    pub aux_stream: Option<MixState>,
    pub optimizers: Vec<OptimizerState>,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Aux head spec per auxiliary manifest; ids follow the task name.
fn aux_heads(config: &TrainConfig, names: &[String], num_classes: &[usize]) -> Result<Vec<HeadSpec>> {
    let task = config.aux_task;
    let mut specs: Vec<HeadSpec> = Vec::new();
    for (name, &k) in names.iter().zip(num_classes) {
        if specs.iter().any(|s| s.dataset_id.as_deref() == Some(name)) {
            return Err(Error::Config(format!("auxiliary datasets share the name '{name}'")));
        }
        let id = if names.len() == 1 {
            task.name().to_string()
        } else {
            format!("{}.{name}", task.name())
        };
        specs.push(HeadSpec::aux(id, task, k, Some(name.clone())));
    }
    Ok(specs)
}

struct Session {
    config: TrainConfig,
    arch: Model<f64>,
    params: ParamStore<f64>,
    depth: Vec<Prepared>,
    depth_stream: BatchStream,
    aux: Vec<AuxSet>,
    aux_source: Option<MixedAuxSource>,
    depth_opt: AdamW<f64>,
    aux_opt: Option<AdamW<f64>>,
    step: usize,
}

impl Session {
    fn build(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let depth_m = depth_manifest(&config.depth_manifest, config.depth_fraction, config.seed)?;
        let mut aux_ms = Vec::new();
        if config.mode.is_joint() {
            for p in &config.aux_manifests {
                let m = load_manifest(p)?;
                if !m.has_task(config.aux_task) {
                    return Err(Error::invalid(format!(
                        "{}: dataset does not provide {} labels",
                        p.display(),
                        config.aux_task.name()
                    )));
                }
                aux_ms.push(m);
            }
        }
        let names: Vec<String> = aux_ms.iter().map(|m| m.name.clone()).collect();
        let classes: Vec<usize> = aux_ms.iter().map(|m| m.num_classes).collect();
        let arch = Model::init(config.model.clone(), aux_heads(config, &names, &classes)?, config.seed)?;
        let depth = prepare_depth(&arch, &depth_m)?;
        let aux = aux_ms
            .iter()
            .map(|m| {
                Ok(AuxSet {
                    dataset_id: m.name.clone(),
                    samples: prepare_aux(&arch, m, config.aux_task)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let depth_stream = BatchStream::new(depth.len(), config.seed, "depth")?;
        let aux_source = if aux.is_empty() {
            None
        } else {
            let sizes: Vec<(String, usize)> = aux.iter().map(|a| (a.dataset_id.clone(), a.samples.len())).collect();
            Some(MixedAuxSource::new(&sizes, config.seed)?)
        };
        let params = arch.params().clone();
        let decoder = arch.decoder().param_ids();
        let mut depth_ids = decoder.clone();
        depth_ids.extend(arch.depth_head().param_ids());
        let mut aux_ids = decoder;
        for h in arch.aux_heads() {
            aux_ids.extend(h.param_ids());
        }
        let (depth_opt, aux_opt) = match (config.mode.is_joint(), config.moments) {
            (false, _) => (AdamW::new(config.adamw(), &params, &depth_ids), None),
            (true, MomentSharing::Independent) => (
                AdamW::new(config.adamw(), &params, &depth_ids),
                Some(AdamW::new(config.adamw(), &params, &aux_ids)),
            ),
            (true, MomentSharing::Shared) => {
                let all: Vec<ParamId> = params.ids().collect();
                (AdamW::new(config.adamw(), &params, &all), None)
            }
        };
        Ok(Session {
            config: config.clone(),
            arch,
            params,
            depth,
            depth_stream,
            aux,
            aux_source,
            depth_opt,
            aux_opt,
            step: 0,
        })
    }

    fn header(&self) -> CheckpointHeader {
        let names = |opt: &AdamW<f64>| {
            opt.owned_ids()
                .iter()
                .map(|&id| self.params.get(id).name.clone())
                .collect()
        };
        let mut optimizers = vec![OptimizerState {
            name: "depth".into(),
            step: self.depth_opt.step_count(),
            params: names(&self.depth_opt),
        }];
        if let Some(opt) = &self.aux_opt {
            optimizers.push(OptimizerState {
                name: "aux".into(),
                step: opt.step_count(),
                params: names(opt),
            });
        }
        CheckpointHeader {
            kind: CHECKPOINT_KIND.into(),
            step: self.step,
            config: self.config.clone(),
            model: self.arch.config().clone(),
            heads: self.arch.head_specs(),
            encoder_fingerprint: self.arch.encoder().fingerprint(),
            depth_stream: self.depth_stream.state(),
            aux_stream: self.aux_source.as_ref().map(MixedAuxSource::state),
            optimizers,
        }
    }

    fn checkpoint(&self) -> Result<Container> {
        let mut c = Container::new(serde_json::to_value(self.header())?);
        for (_, p) in self.params.iter() {
            c.push(format!("param/{}", p.name), p.value.clone());
        }
        let opts = std::iter::once(("depth", &self.depth_opt)).chain(self.aux_opt.iter().map(|o| ("aux", o)));
        for (name, opt) in opts {
            for id in opt.owned_ids() {
                let m = opt.moments(id).expect("owned");
                let pname = &self.params.get(id).name;
                c.push(format!("opt.{name}/m/{pname}"), m.m.clone());
                c.push(format!("opt.{name}/v/{pname}"), m.v.clone());
            }
        }
        Ok(c)
    }

    fn restore(&mut self, mut c: Container) -> Result<()> {
        let header: CheckpointHeader = serde_json::from_value(c.header.clone())?;
        if header.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("not a run checkpoint: kind '{}'", header.kind)));
        }
        if header.config != self.config {
            return Err(Error::Config("checkpoint was written with a different config".into()));
        }
        if header.encoder_fingerprint != self.arch.encoder().fingerprint() {
            return Err(Error::Format("frozen encoder differs from the checkpoint".into()));
        }
        if header.step > self.config.total_steps {
            return Err(Error::Format(format!("checkpoint step {} beyond total_steps", header.step)));
        }
        let names: Vec<String> = self.params.iter().map(|(_, p)| p.name.clone()).collect();
        for name in &names {
            let t = c.take(&format!("param/{name}"))?.into_float::<f64>()?;
            self.params.set(name, t)?;
        }
        let mut restore_opt = |label: &str, opt: &mut AdamW<f64>, state: &OptimizerState| -> Result<()> {
            let moments = opt
                .owned_ids()
                .into_iter()
                .map(|id| {
                    let pname = self.params.get(id).name.clone();
                    let mut take = |which: &str| -> Result<_> {
                        c.take(&format!("opt.{label}/{which}/{pname}"))?.into_float::<f64>()
                    };
                    let (m, v) = (take("m")?, take("v")?);
                    Ok((id, Moments { m, v }))
                })
                .collect::<Result<Vec<_>>>()?;
            opt.restore(state.step, moments)
        };
        let find = |n: &str| {
            header
                .optimizers
                .iter()
                .find(|o| o.name == n)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer '{n}'")))
        };
        restore_opt("depth", &mut self.depth_opt, find("depth")?)?;
        if let Some(opt) = self.aux_opt.as_mut() {
            restore_opt("aux", opt, find("aux")?)?;
        }
        self.depth_stream.restore(header.depth_stream)?;
        match (self.aux_source.as_mut(), &header.aux_stream) {
            (Some(src), Some(st)) => src.restore(st)?,
            (None, None) => {}
            _ => return Err(Error::Format("auxiliary stream state does not match the config".into())),
        }
        self.step = header.step;
        Ok(())
    }

    fn run_step(&mut self) -> Result<Vec<PhaseRecord<f64>>> {
        let t = self.step + 1;
        let plan = self.config.plan()?;
        let d_idx = self.depth_stream.next_batch(self.config.batch_size_depth);
        let d_batch: Vec<&Prepared> = d_idx.iter().map(|&i| &self.depth[i]).collect();
        let decoder = self.arch.decoder().param_ids();
        let depth_head = self.arch.depth_head().param_ids();
        let depth_ids = PhaseParams {
            decoder: &decoder,
            head: &depth_head,
        };
        let arch = &self.arch;
        let depth_obj = |p: &ParamStore<f64>| batch_objective(arch, p, DEPTH_HEAD, &d_batch);
        let records = match self.aux_source.as_mut() {
            None => vec![apply_phase(
                &mut self.params,
                &mut self.depth_opt,
                &plan,
                Phase::Depth,
                t,
                depth_ids,
                depth_obj,
            )?],
            Some(source) => {
                let tb = source.next_batch(self.config.batch_size_aux);
                let head = arch.head_for_dataset(&tb.dataset_id)?;
                let head_ids = head.param_ids();
                let set = &self.aux[tb.source];
                let a_batch: Vec<&Prepared> = tb.indices.iter().map(|&i| &set.samples[i]).collect();
                let head_name = head.spec.id.as_str();
                let aux_obj = |p: &ParamStore<f64>| batch_objective(arch, p, head_name, &a_batch);
                joint_step(
                    &mut self.params,
                    &mut self.depth_opt,
                    self.aux_opt.as_mut(),
                    &plan,
                    t,
                    depth_ids,
                    PhaseParams {
                        decoder: &decoder,
                        head: &head_ids,
                    },
                    depth_obj,
                    aux_obj,
                )?
                .to_vec()
            }
        };
        self.step = t;
        Ok(records)
    }

    /// The trained model.
    fn model(&self) -> Model<f64> {
        let mut m = self.arch.clone();
        *m.params_mut() = self.params.clone();
        m
    }
}

fn format_record(r: &PhaseRecord<f64>) -> String {
    format!("{},{},{},{},{}", r.step, r.phase.name(), r.loss, r.decoder_lr, r.head_lr)
}

fn parse_record(line: &str) -> Result<PhaseRecord<f64>> {
    let bad = || Error::Format(format!("bad log line '{line}'"));
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 5 {
        return Err(bad());
    }
    let phase = match f[1] {
        "depth" => Phase::Depth,
        "aux" => Phase::Aux,
        _ => return Err(bad()),
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    Ok(PhaseRecord {
        step: f[0].parse().map_err(|_| bad())?,
        phase,
        loss: num(f[2])?,
        decoder_lr: num(f[3])?,
        head_lr: num(f[4])?,
    })
}

/// Parses a run's step log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<PhaseRecord<f64>>> {
    let path = path.as_ref();
    let file = io(path, File::open(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose().map_err(|e| Error::io(path, e))?;
    if header.as_deref() != Some(LOG_HEADER) {
        return Err(Error::Format(format!("{}: missing log header", path.display())));
    }
    lines.map(|l| parse_record(&io(path, l)?)).collect()
}

fn prepare_run_dir(dir: &Path, opts: &TrainOptions) -> Result<bool> {
    let resuming = opts.resume && dir.join(CHECKPOINT_FILE).exists();
    if !resuming && dir.exists() && io(dir, fs::read_dir(dir))?.next().is_some() {
        if !opts.overwrite {
            return Err(Error::Config(format!(
                "run directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        io(dir, fs::remove_dir_all(dir))?;
    }
    io(dir, fs::create_dir_all(dir))?;
    Ok(resuming)
}

/// Runs (or resumes) training as described by `config` in `run_dir`.
pub fn train(config: &TrainConfig, run_dir: impl AsRef<Path>, opts: &TrainOptions) -> Result<RunRecord> {
    let dir = run_dir.as_ref();
    let mut session = Session::build(config)?;
    let resuming = prepare_run_dir(dir, opts)?;
    let log_path = dir.join(LOG_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    if resuming {
        session.restore(Container::load(&ckpt_path)?)?;
        let kept: Vec<String> = read_log(&log_path)?
            .iter()
            .filter(|r| r.step <= session.step)
            .map(format_record)
            .collect();
        let mut text = format!("{LOG_HEADER}\n");
        for l in kept {
            text.push_str(&l);
            text.push('\n');
        }
        io(&log_path, fs::write(&log_path, text))?;
    } else {
        let cfg_path = dir.join(CONFIG_FILE);
        io(&cfg_path, fs::write(&cfg_path, config.to_toml()?))?;
        io(&log_path, fs::write(&log_path, format!("{LOG_HEADER}\n")))?;
    }
    let started = Instant::now();
    let mut log = BufWriter::new(io(&log_path, OpenOptions::new().append(true).open(&log_path))?);
    let total = config.total_steps;
    let stop = opts.stop_after.unwrap_or(total).min(total);
    while session.step < stop {
        for r in session.run_step()? {
            io(&log_path, writeln!(log, "{}", format_record(&r)))?;
        }
        if config.checkpoint_every > 0 && session.step % config.checkpoint_every == 0 && session.step < total {
            io(&log_path, log.flush())?;
            session.checkpoint()?.save(&ckpt_path)?;
        }
    }
    io(&log_path, log.flush())?;
    drop(log);
    let container = session.checkpoint()?;
    container.save(&ckpt_path)?;
    let completed = session.step == total;
    let mut final_path = ckpt_path.clone();
    let mut eval = None;
    if completed {
        final_path = dir.join(FINAL_CHECKPOINT);
        container.save(&final_path)?;
        if let Some(test) = &config.eval_manifest {
            let m = load_manifest(test)?;
            let report = evaluate(&session.model(), &m.load_all::<f64>()?, &m.name, Some(config.seed))?;
            report.save(dir.join(EVAL_FILE))?;
            eval = Some(report);
        }
    }
    let wall = started.elapsed().as_secs_f64();
    let timing = serde_json::json!({ "wall_clock_secs": wall, "steps_completed": session.step });
    let timing_path = dir.join(TIMING_FILE);
    io(&timing_path, fs::write(&timing_path, format!("{timing:#}\n")))?;
    Ok(RunRecord {
        run_dir: dir.to_path_buf(),
        config: config.clone(),
        log: read_log(&log_path)?,
        step: session.step,
        completed,
        wall_clock_secs: wall,
        checkpoint: final_path,
        eval,
    })
}

/// Depth-only training; `config.mode` must be baseline or gamma ablation.
pub fn train_baseline(config: &TrainConfig, run_dir: impl AsRef<Path>, opts: &TrainOptions) -> Result<RunRecord> {
    if config.mode.is_joint() {
        return Err(Error::Config("train_baseline needs mode baseline or gamma_ablation".into()));
    }
    train(config, run_dir, opts)
}

/// Alternating depth and auxiliary training; `config.mode` must be joint or
/// beta ablation.
pub fn train_joint(config: &TrainConfig, run_dir: impl AsRef<Path>, opts: &TrainOptions) -> Result<RunRecord> {
    if !config.mode.is_joint() {
        return Err(Error::Config("train_joint needs mode joint or beta_ablation".into()));
    }
    train(config, run_dir, opts)
}

/// Rebuilds the trained model stored in `checkpoint`.
///
/// `expected` is the architecture the caller believes was used; the frozen
/// encoder it implies must match the one recorded in the checkpoint.
pub fn load_checkpoint_model(checkpoint: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<(Model<f64>, CheckpointHeader)> {
    let mut c = Container::load(checkpoint)?;
    let header: CheckpointHeader = serde_json::from_value(c.header.clone())?;
    if header.kind != CHECKPOINT_KIND {
        return Err(Error::Format(format!("not a run checkpoint: kind '{}'", header.kind)));
    }
    let arch = expected.unwrap_or(&header.model).clone();
    let mut model = Model::init(arch, header.heads.clone(), header.config.seed)?;
    if model.encoder().fingerprint() != header.encoder_fingerprint {
        return Err(Error::Format(
            "frozen encoder mismatch: the configured encoder differs from the one used in training".into(),
        ));
    }
    let names: Vec<String> = model.params().iter().map(|(_, p)| p.name.clone()).collect();
    for name in names {
        let t: StoredTensor = c.take(&format!("param/{name}"))?;
        model.params_mut().set(&name, t.into_float()?)?;
    }
    Ok((model, header))
}

/// Model of a completed run, checked against the run's config snapshot.
pub fn load_run_model(run_dir: impl AsRef<Path>) -> Result<(Model<f64>, CheckpointHeader)> {
    let dir = run_dir.as_ref();
    let config = TrainConfig::load(dir.join(CONFIG_FILE))?;
    let ckpt = dir.join(FINAL_CHECKPOINT);
    if !ckpt.exists() {
        return Err(Error::invalid(format!("{} has no final checkpoint", dir.display())));
    }
    load_checkpoint_model(ckpt, Some(&config.model))
}
