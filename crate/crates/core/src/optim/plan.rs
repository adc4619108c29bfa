use serde::{Deserialize, Serialize};

use super::Schedule;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half of a joint global step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Depth,
    Aux,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Depth => "depth",
            Phase::Aux => "aux",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Decoder,
    DepthHead,
    AuxHead,
}

/// How the decoder learning rate is scaled per phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrMode<T> {
    /// Joint training: depth phase `alpha`, aux phase `1 - alpha`.
    Alpha(T),
    /// Unscaled depth steps, aux steps scaled by `beta`.
    Beta(T),
    /// Depth-only training with every rate scaled by `gamma`.
    Gamma(T),
}

/// Learning-rate plan of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LrPlan<T> {
    pub decoder_lr: T,
    pub depth_head_lr: T,
    pub aux_head_lr: T,
    pub alpha: Option<T>,
    pub beta: Option<T>,
    pub gamma: Option<T>,
    pub schedule: Schedule,
}

impl<T: Scalar> LrPlan<T> {
    /// All three rates equal to `lr`, no scaling mode set.
    pub fn uniform(lr: T, schedule: Schedule) -> Self {
        LrPlan {
            decoder_lr: lr,
            depth_head_lr: lr,
            aux_head_lr: lr,
            alpha: None,
            beta: None,
            gamma: None,
            schedule,
        }
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_beta(mut self, beta: T) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = Some(gamma);
        self
    }

    /// The single active mode; errors unless exactly one scalar is set.
    pub fn mode(&self) -> Result<LrMode<T>> {
        match (self.alpha, self.beta, self.gamma) {
            (Some(a), None, None) => {
                if !(a >= T::zero() && a <= T::one()) {
                    return Err(Error::Config(format!("alpha must lie in [0, 1], got {a}")));
                }
                Ok(LrMode::Alpha(a))
            }
            (None, Some(b), None) => Ok(LrMode::Beta(b)),
            (None, None, Some(g)) => Ok(LrMode::Gamma(g)),
            (None, None, None) => Err(Error::Config("no learning-rate mode set".into())),
            _ => Err(Error::Config("alpha, beta and gamma modes are mutually exclusive".into())),
        }
    }

    /// Rate applied to `component` during `phase` at global step `t`.
    pub fn effective_lr(&self, phase: Phase, component: Component, t: usize) -> Result<T> {
        let s: T = self.schedule.multiplier(t)?;
        let mode = self.mode()?;
        let head = |lr: T| lr * s;
        let misplaced = || {
            Err(Error::invalid(format!(
                "{component:?} is not updated in the {} phase",
                phase.name()
            )))
        };
        match (component, phase) {
            (Component::DepthHead, Phase::Aux) | (Component::AuxHead, Phase::Depth) => return misplaced(),
            _ => {}
        }
        let decoder = self.decoder_lr * s;
        match mode {
            LrMode::Alpha(alpha) => Ok(match (component, phase) {
                (Component::Decoder, Phase::Depth) => alpha * decoder,
                (Component::Decoder, Phase::Aux) => (T::one() - alpha) * decoder,
                (Component::DepthHead, _) => head(self.depth_head_lr),
                (Component::AuxHead, _) => head(self.aux_head_lr),
            }),
            LrMode::Beta(beta) => Ok(match (component, phase) {
                (Component::Decoder, Phase::Depth) => decoder,
                (Component::Decoder, Phase::Aux) => beta * decoder,
                (Component::DepthHead, _) => head(self.depth_head_lr),
                (Component::AuxHead, _) => head(self.aux_head_lr),
            }),
            LrMode::Gamma(gamma) => match (component, phase) {
                (Component::Decoder, Phase::Depth) => Ok(gamma * decoder),
                (Component::DepthHead, Phase::Depth) => Ok(gamma * head(self.depth_head_lr)),
                _ => Err(Error::invalid("gamma mode has no auxiliary phase")),
            },
        }
    }
}
