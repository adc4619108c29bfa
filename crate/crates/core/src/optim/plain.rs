use super::Optimizer;
use crate::error::{Error, Result};
use crate::model::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Momentum-free `p <- p - lr g`.
///
/// Only meant for checking the two-phase update in closed form; it has no
/// state, so one joint step can be expanded symbolically.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlainGradient;

impl<T: Scalar> Optimizer<T> for PlainGradient {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, rates: &[(ParamId, T)]) -> Result<()> {
        for &(id, lr) in rates {
            let Some(g) = grads.get(id) else { continue };
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of '{}'", params.get(id).name)));
            }
            let p = params.value_mut(id);
            for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
        Ok(())
    }
}
