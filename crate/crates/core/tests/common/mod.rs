#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use auxstep::synthgen::{self, SceneSpec};
use auxstep::trainer::{TrainConfig, TrainMode};

pub struct Fixture {
    _dir: tempfile::TempDir,
    pub train: PathBuf,
    pub test: PathBuf,
}

/// A small synthetic dataset shared by the tests of one binary.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            height: 16,
            width: 16,
            num_classes: 5,
            ..SceneSpec::default()
        };
        let m = synthgen::generate(&spec, 40, 1, dir.path(), 1).unwrap();
        let (train, test) = synthgen::split(&m, 0.75, 1).unwrap();
        let (tp, ep) = (dir.path().join("train.json"), dir.path().join("test.json"));
        train.save(&tp).unwrap();
        test.save(&ep).unwrap();
        Fixture {
            _dir: dir,
            train: tp,
            test: ep,
        }
    })
}

pub fn config(mode: TrainMode, steps: usize) -> TrainConfig {
    let f = fixture();
    let mut c = TrainConfig::new(mode, &f.train);
    c.total_steps = steps;
    c.base_lr = 1e-3;
    c.batch_size_depth = 2;
    c.batch_size_aux = 2;
    c.eval_manifest = Some(f.test.clone());
    if mode.is_joint() {
        c.aux_manifests = vec![f.train.clone()];
    }
    match mode {
        TrainMode::Joint => c.alpha = Some(0.9),
        TrainMode::BetaAblation => c.beta = Some(0.5),
        TrainMode::GammaAblation => c.gamma = Some(1.0),
        TrainMode::Baseline => {}
    }
    c
}
