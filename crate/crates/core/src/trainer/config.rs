use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaskKind};
use crate::optim::{AdamWConfig, LrPlan, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    Joint,
    BetaAblation,
    GammaAblation,
}

impl TrainMode {
    /// True for modes with an auxiliary phase.
    pub fn is_joint(self) -> bool {
        matches!(self, TrainMode::Joint | TrainMode::BetaAblation)
    }
}

/// Whether the two phases keep separate AdamW moments for the decoder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSharing {
    #[default]
    Independent,
    Shared,
}

pub const DEFAULT_ALPHA: f64 = 0.9;

fn d_aux_task() -> TaskKind {
    TaskKind::Mldc
}
fn d_total_steps() -> usize {
    38_400
}
fn d_batch() -> usize {
    4
}
fn d_lr() -> f64 {
    1e-4
}
fn d_wd() -> f64 {
    0.01
}
fn d_warmup() -> f64 {
    1.0 / 3.0
}
fn d_fraction() -> f64 {
    1.0
}

/// One training run, usually read from TOML. Relative paths are resolved
/// against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Decoder share of the depth phase; joint mode only, defaults to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Auxiliary-phase decoder scale; beta ablation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Baseline learning-rate scale; gamma ablation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "d_aux_task")]
    pub aux_task: TaskKind,
    #[serde(default = "d_total_steps")]
    pub total_steps: usize,
    #[serde(default = "d_batch")]
    pub batch_size_depth: usize,
    #[serde(default = "d_batch")]
    pub batch_size_aux: usize,
    #[serde(default = "d_lr")]
    pub base_lr: f64,
    /// Head learning rate; defaults to `base_lr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_lr: Option<f64>,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    pub depth_manifest: PathBuf,
    #[serde(default)]
    pub aux_manifests: Vec<PathBuf>,
    #[serde(default = "d_fraction")]
    pub depth_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_manifest: Option<PathBuf>,
    /// Save a resumable checkpoint every this many steps; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub moments: MomentSharing,
    #[serde(default)]
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Defaults for `mode` reading depth data from `depth_manifest`.
    pub fn new(mode: TrainMode, depth_manifest: impl Into<PathBuf>) -> Self {
        TrainConfig {
            mode,
            alpha: None,
            beta: None,
            gamma: None,
            aux_task: d_aux_task(),
            total_steps: d_total_steps(),
            batch_size_depth: d_batch(),
            batch_size_aux: d_batch(),
            base_lr: d_lr(),
            head_lr: None,
            weight_decay: d_wd(),
            warmup_fraction: d_warmup(),
            seed: 0,
            depth_manifest: depth_manifest.into(),
            aux_manifests: Vec::new(),
            depth_fraction: d_fraction(),
            eval_manifest: None,
            checkpoint_every: 0,
            moments: MomentSharing::Independent,
            model: ModelConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Alpha in effect for joint mode.
    pub fn effective_alpha(&self) -> Option<f64> {
        match self.mode {
            TrainMode::Joint => Some(self.alpha.unwrap_or(DEFAULT_ALPHA)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (a, b, g) = (self.alpha.is_some(), self.beta.is_some(), self.gamma.is_some());
        match self.mode {
            TrainMode::Baseline if a || b || g => return bad("baseline mode takes no alpha, beta or gamma".into()),
            TrainMode::Joint if b || g => return bad("joint mode takes only alpha".into()),
            TrainMode::BetaAblation if a || g || !b => return bad("beta_ablation needs beta and nothing else".into()),
            TrainMode::GammaAblation if a || b || !g => return bad("gamma_ablation needs gamma and nothing else".into()),
            _ => {}
        }
        if let Some(alpha) = self.alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return bad(format!("alpha must lie in [0, 1], got {alpha}"));
            }
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be a finite non-negative number, got {v}"));
                }
            }
        }
        if self.aux_task == TaskKind::Depth {
            return bad("aux_task cannot be depth".into());
        }
        if self.mode.is_joint() && self.aux_manifests.is_empty() {
            return bad("joint training needs at least one auxiliary manifest".into());
        }
        if self.batch_size_depth == 0 || self.batch_size_aux == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be finite and non-negative, got {}", self.base_lr));
        }
        if let Some(h) = self.head_lr {
            if !(h >= 0.0 && h.is_finite()) {
                return bad(format!("head_lr must be finite and non-negative, got {h}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)".into());
        }
        if !(self.depth_fraction > 0.0 && self.depth_fraction <= 1.0) {
            return bad(format!("depth_fraction must lie in (0, 1], got {}", self.depth_fraction));
        }
        self.model.validate()
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.total_steps, self.warmup_fraction)
    }

    /// Learning-rate plan; the baseline is expressed as the gamma mode at 1.
    pub fn plan(&self) -> Result<LrPlan<f64>> {
        let head = self.head_lr.unwrap_or(self.base_lr);
        let mut plan = LrPlan::uniform(self.base_lr, self.schedule()?);
        plan.depth_head_lr = head;
        plan.aux_head_lr = head;
        let plan = match self.mode {
            TrainMode::Baseline => plan.with_gamma(1.0),
            TrainMode::GammaAblation => plan.with_gamma(self.gamma.expect("validated")),
            TrainMode::Joint => plan.with_alpha(self.effective_alpha().expect("joint")),
            TrainMode::BetaAblation => plan.with_beta(self.beta.expect("validated")),
        };
        plan.mode()?;
        Ok(plan)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}
