mod common;

use std::fs;

use auxstep::data_io::{Container, StoredTensor};
use auxstep::model::Model;
use auxstep::optim::Phase;
use auxstep::trainer::{
    load_run_model, read_log, run_seeds, train, train_baseline, train_joint, MomentSharing, TrainConfig, TrainMode,
    TrainOptions, CHECKPOINT_FILE, CONFIG_FILE, EVAL_FILE, FINAL_CHECKPOINT, LOG_FILE,
};
use common::config;

fn opts() -> TrainOptions {
    TrainOptions::default()
}

fn params(path: &std::path::Path) -> Vec<(String, StoredTensor)> {
    Container::load(path)
        .unwrap()
        .entries
        .into_iter()
        .filter(|(n, _)| n.starts_with("param/"))
        .collect()
}

fn param_entries(c: &[(String, StoredTensor)], prefix: &str) -> Vec<(String, StoredTensor)> {
    c.iter().filter(|(n, _)| n.starts_with(prefix)).cloned().collect()
}

#[test]
fn zero_steps_keep_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(TrainMode::Baseline, 0);
    let r = train_baseline(&c, dir.path(), &opts()).unwrap();
    assert!(r.completed && r.log.is_empty());
    let init: Model<f64> = Model::init(c.model.clone(), vec![], c.seed).unwrap();
    for (name, t) in params(&dir.path().join(FINAL_CHECKPOINT)) {
        let id = init.params().find(&name["param/".len()..]).unwrap();
        assert_eq!(t, StoredTensor::F64(init.params().value(id).clone()));
    }
}

#[test]
fn runs_are_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = config(TrainMode::Joint, 12);
    train(&c, a.path(), &opts()).unwrap();
    train(&c, b.path(), &opts()).unwrap();
    for f in [LOG_FILE, FINAL_CHECKPOINT, CONFIG_FILE, EVAL_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn log_shape_and_rate_conservation() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(TrainMode::Joint, 9);
    let r = train_joint(&c, dir.path(), &opts()).unwrap();
    assert_eq!(r.log.len(), 18);
    let plan = c.plan().unwrap();
    for pair in r.log.chunks(2) {
        assert_eq!((pair[0].phase, pair[1].phase), (Phase::Depth, Phase::Aux));
        assert_eq!(pair[0].step, pair[1].step);
        let s: f64 = plan.schedule.multiplier(pair[0].step).unwrap();
        assert!((pair[0].decoder_lr + pair[1].decoder_lr - c.base_lr * s).abs() <= 1e-15);
    }
    assert_eq!(read_log(dir.path().join(LOG_FILE)).unwrap(), r.log);
    let b = tempfile::tempdir().unwrap();
    let base = train(&config(TrainMode::Baseline, 9), b.path(), &opts()).unwrap();
    assert_eq!(base.log.len(), 9);
    assert!(base.log.iter().all(|r| r.phase == Phase::Depth));
}

#[test]
fn unit_gamma_is_the_baseline() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&config(TrainMode::Baseline, 10), a.path(), &opts()).unwrap();
    train(&config(TrainMode::GammaAblation, 10), b.path(), &opts()).unwrap();
    assert_eq!(
        params(&a.path().join(FINAL_CHECKPOINT)),
        params(&b.path().join(FINAL_CHECKPOINT))
    );
}

#[test]
fn alpha_extremes() {
    let (a, b, j) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&config(TrainMode::Baseline, 10), a.path(), &opts()).unwrap();
    let mut one = config(TrainMode::Joint, 10);
    one.alpha = Some(1.0);
    let r = train(&one, b.path(), &opts()).unwrap();
    assert!(r.log.iter().filter(|e| e.phase == Phase::Aux).all(|e| e.decoder_lr == 0.0));
    let base = params(&a.path().join(FINAL_CHECKPOINT));
    let joint = params(&b.path().join(FINAL_CHECKPOINT));
    for prefix in ["param/decoder.", "param/head.depth."] {
        assert_eq!(param_entries(&base, prefix), param_entries(&joint, prefix));
    }
    let mut zero = config(TrainMode::Joint, 10);
    zero.alpha = Some(0.0);
    let r = train(&zero, j.path(), &opts()).unwrap();
    assert!(r.log.iter().filter(|e| e.phase == Phase::Depth).all(|e| e.decoder_lr == 0.0));
    assert!(r.log.iter().filter(|e| e.phase == Phase::Aux).any(|e| e.decoder_lr > 0.0));
}

#[test]
fn beta_and_shared_moment_variants_run() {
    let dir = tempfile::tempdir().unwrap();
    let r = train(&config(TrainMode::BetaAblation, 6), dir.path().join("beta"), &opts()).unwrap();
    let plan = config(TrainMode::BetaAblation, 6).plan().unwrap();
    for pair in r.log.chunks(2) {
        let s: f64 = plan.schedule.multiplier(pair[0].step).unwrap();
        assert_eq!(pair[0].decoder_lr, 1e-3 * s);
        assert_eq!(pair[1].decoder_lr, 0.5 * (1e-3 * s));
    }
    let mut shared = config(TrainMode::Joint, 6);
    shared.moments = MomentSharing::Shared;
    let r = train(&shared, dir.path().join("shared"), &opts()).unwrap();
    assert!(r.completed);
    let header = Container::load(dir.path().join("shared").join(FINAL_CHECKPOINT)).unwrap().header;
    assert_eq!(header["optimizers"].as_array().unwrap().len(), 1);
    assert_eq!(header["optimizers"][0]["step"], 12);
}

#[test]
fn interrupted_runs_resume_exactly() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c = config(TrainMode::Joint, 14);
    c.checkpoint_every = 4;
    train(&c, a.path(), &opts()).unwrap();
    let partial = train(
        &c,
        b.path(),
        &TrainOptions {
            stop_after: Some(7),
            ..opts()
        },
    )
    .unwrap();
    assert!(!partial.completed && partial.step == 7);
    assert!(!b.path().join(FINAL_CHECKPOINT).exists());
    // simulate log lines written after the last checkpoint
    let mut log = fs::read_to_string(b.path().join(LOG_FILE)).unwrap();
    log.push_str("8,depth,1,0,0\n");
    fs::write(b.path().join(LOG_FILE), log).unwrap();
    let resumed = train(
        &c,
        b.path(),
        &TrainOptions {
            resume: true,
            ..opts()
        },
    )
    .unwrap();
    assert!(resumed.completed);
    for f in [LOG_FILE, FINAL_CHECKPOINT] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let before = fs::read(b.path().join(FINAL_CHECKPOINT)).unwrap();
    let again = train(
        &c,
        b.path(),
        &TrainOptions {
            resume: true,
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(again.step, 14);
    assert_eq!(fs::read(b.path().join(FINAL_CHECKPOINT)).unwrap(), before);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(TrainMode::Baseline, 4);
    train(&c, dir.path(), &TrainOptions { stop_after: Some(2), ..opts() }).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&path, &bytes).unwrap();
    let err = train(&c, dir.path(), &TrainOptions { resume: true, ..opts() }).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
    assert_eq!(fs::read(&path).unwrap(), bytes);

    let mut other = c.clone();
    other.base_lr = 5e-4;
    train(&c, dir.path(), &TrainOptions { stop_after: Some(2), overwrite: true, ..opts() }).unwrap();
    assert!(train(&other, dir.path(), &TrainOptions { resume: true, ..opts() }).is_err());
}

#[test]
fn refuses_to_overwrite_without_permission() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(TrainMode::Baseline, 2);
    train(&c, dir.path(), &opts()).unwrap();
    let err = train(&c, dir.path(), &opts()).unwrap_err();
    assert!(err.is_validation());
    train(&c, dir.path(), &TrainOptions { overwrite: true, ..opts() }).unwrap();
}

#[test]
fn encoder_is_frozen_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(TrainMode::Joint, 5);
    let fresh: Model<f64> = Model::init(c.model.clone(), vec![], 0).unwrap();
    train(&c, dir.path(), &opts()).unwrap();
    let (model, header) = load_run_model(dir.path()).unwrap();
    assert_eq!(header.encoder_fingerprint, fresh.encoder().fingerprint());
    assert_eq!(model.encoder(), fresh.encoder());
    let mut tampered: TrainConfig = TrainConfig::load(dir.path().join(CONFIG_FILE)).unwrap();
    tampered.model.encoder_seed = 99;
    fs::write(dir.path().join(CONFIG_FILE), tampered.to_toml().unwrap()).unwrap();
    let err = load_run_model(dir.path()).unwrap_err();
    assert!(err.to_string().contains("encoder"), "{err}");
}

#[test]
fn config_validation() {
    let base = config(TrainMode::Baseline, 5);
    let text = base.to_toml().unwrap();
    assert_eq!(TrainConfig::from_toml(&text).unwrap(), base);
    let with = |edit: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        edit(&mut c);
        c.validate()
    };
    assert!(with(&|c| c.alpha = Some(0.5)).is_err());
    assert!(with(&|c| {
        c.mode = TrainMode::Joint;
        c.alpha = Some(1.5);
    })
    .is_err());
    assert!(with(&|c| {
        c.mode = TrainMode::Joint;
        c.aux_manifests.clear();
    })
    .is_err());
    assert!(with(&|c| c.mode = TrainMode::BetaAblation).is_err());
    assert!(with(&|c| c.depth_fraction = 0.0).is_err());
    assert!(TrainConfig::from_toml("mode = \"joint\"\nbogus = 1\ndepth_manifest = \"x\"").is_err());
    let joint = TrainConfig::from_toml("mode = \"joint\"\ndepth_manifest = \"d.json\"\naux_manifests = [\"a.json\"]").unwrap();
    assert_eq!(joint.effective_alpha(), Some(0.9));
    assert_eq!(joint.total_steps, 38400);
}

#[test]
fn seeds_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(TrainMode::Baseline, 3);
    let report = run_seeds(&c, &[0, 1, 2, 3], dir.path(), &opts(), 2).unwrap();
    assert_eq!(report.runs.len(), 4);
    assert_eq!(
        report.runs.iter().map(|r| r.run_id.as_str()).collect::<Vec<_>>(),
        ["seed-0", "seed-1", "seed-2", "seed-3"]
    );
    let values: Vec<f64> = report.runs.iter().map(|r| r.absrel).collect();
    let mean = values.iter().sum::<f64>() / 4.0;
    assert!((report.mean - mean).abs() < 1e-15);
    assert!(run_seeds(&c, &[0], dir.path().join("one"), &opts(), 1).is_err());
}
