//! Optimizers, the warmup-cosine schedule and the per-phase learning-rate plan.

mod adamw;
mod plain;
mod plan;
mod schedule;

pub use adamw::{AdamW, AdamWConfig, Moments};
pub use plain::PlainGradient;
pub use plan::{Component, LrMode, LrPlan, Phase};
pub use schedule::Schedule;

use crate::error::Result;
use crate::model::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;

/// A first-order update rule applied with one rate per parameter.
pub trait Optimizer<T: Scalar> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, rates: &[(ParamId, T)]) -> Result<()>;
}
