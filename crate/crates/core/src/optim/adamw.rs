use serde::{Deserialize, Serialize};

use super::Optimizer;
use crate::error::{Error, Result};
use crate::model::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// AdamW with bias correction and decoupled weight decay, owning moment
/// estimates for a fixed set of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    owned: Vec<(ParamId, Moments<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>, ids: &[ParamId]) -> Self {
        let owned = ids
            .iter()
            .map(|&id| {
                let shape = params.value(id).shape();
                (
                    id,
                    Moments {
                        m: Tensor::zeros(shape),
                        v: Tensor::zeros(shape),
                    },
                )
            })
            .collect();
        AdamW {
            config,
            step: 0,
            owned,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Number of applied steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn owned_ids(&self) -> Vec<ParamId> {
        self.owned.iter().map(|(id, _)| *id).collect()
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments<T>> {
        self.owned.iter().find(|(i, _)| *i == id).map(|(_, m)| m)
    }

    /// Restores a previously saved state. Shapes must match.
    pub fn restore(&mut self, step: u64, moments: Vec<(ParamId, Moments<T>)>) -> Result<()> {
        if moments.len() != self.owned.len() {
            return Err(Error::Format("optimizer state covers a different parameter set".into()));
        }
        for ((id, slot), (rid, m)) in self.owned.iter_mut().zip(moments) {
            if *id != rid || slot.m.shape() != m.m.shape() || slot.v.shape() != m.v.shape() {
                return Err(Error::Format(format!("optimizer state mismatch at {id:?}")));
            }
            *slot = m;
        }
        self.step = step;
        Ok(())
    }
}

impl<T: Scalar> Optimizer<T> for AdamW<T> {
    /// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`, then
    /// `p <- p - lr m_hat / (sqrt(v_hat) + eps) - lr wd p` with bias-corrected
    /// moments. Parameters without a gradient see a zero gradient; owned
    /// parameters missing from `rates` are left alone, moments included.
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, rates: &[(ParamId, T)]) -> Result<()> {
        for (id, lr) in rates {
            if self.moments(*id).is_none() {
                return Err(Error::invalid(format!(
                    "parameter '{}' is not owned by this optimizer",
                    params.get(*id).name
                )));
            }
            if !(*lr >= T::zero()) {
                return Err(Error::invalid(format!("negative learning rate {lr}")));
            }
        }
        for (id, _) in &self.owned {
            if let Some(g) = grads.get(*id) {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of '{}'", params.get(*id).name)));
                }
            }
        }
        self.step += 1;
        let c = |x: f64| T::lit(x);
        let (b1, b2, eps, wd) = (
            c(self.config.beta1),
            c(self.config.beta2),
            c(self.config.eps),
            c(self.config.weight_decay),
        );
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (id, mom) in &mut self.owned {
            let Some(lr) = rates.iter().find(|(rid, _)| rid == id).map(|(_, lr)| *lr) else {
                continue;
            };
            let grad = grads.get(*id);
            let p = params.value_mut(*id);
            for k in 0..p.len() {
                let g = grad.map_or(T::zero(), |g| g.data()[k]);
                let m = b1 * mom.m.data()[k] + (T::one() - b1) * g;
                let v = b2 * mom.v.data()[k] + (T::one() - b2) * g * g;
                mom.m.data_mut()[k] = m;
                mom.v.data_mut()[k] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let old = p.data()[k];
                let decay = lr * wd * old;
                p.data_mut()[k] = old - lr * m_hat / (v_hat.sqrt() + eps) - decay;
            }
        }
        Ok(())
    }
}
