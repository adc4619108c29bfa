use crate::error::{Error, Result};
use crate::model::{Gradients, ParamId, ParamStore};
use crate::optim::{Component, LrPlan, Optimizer, Phase};
use crate::scalar::Scalar;

/// What one phase of a global step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRecord<T> {
    pub step: usize,
    pub phase: Phase,
    pub loss: T,
    pub decoder_lr: T,
    pub head_lr: T,
}

/// Parameters updated in one phase.
#[derive(Debug, Clone, Copy)]
pub struct PhaseParams<'a> {
    pub decoder: &'a [ParamId],
    pub head: &'a [ParamId],
}

/// Evaluates `objective` at the current parameters and applies one optimizer
/// step with the rates the plan assigns to `phase` at global step `t`.
pub fn apply_phase<T, O, F>(
    params: &mut ParamStore<T>,
    opt: &mut O,
    plan: &LrPlan<T>,
    phase: Phase,
    t: usize,
    ids: PhaseParams<'_>,
    objective: F,
) -> Result<PhaseRecord<T>>
where
    T: Scalar,
    O: Optimizer<T> + ?Sized,
    F: FnOnce(&ParamStore<T>) -> Result<(T, Gradients<T>)>,
{
    let head_component = match phase {
        Phase::Depth => Component::DepthHead,
        Phase::Aux => Component::AuxHead,
    };
    let decoder_lr = plan.effective_lr(phase, Component::Decoder, t)?;
    let head_lr = plan.effective_lr(phase, head_component, t)?;
    let (loss, grads) = objective(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{} loss at step {t}", phase.name())));
    }
    let rates: Vec<(ParamId, T)> = ids
        .decoder
        .iter()
        .map(|&id| (id, decoder_lr))
        .chain(ids.head.iter().map(|&id| (id, head_lr)))
        .collect();
    opt.step(params, &grads, &rates)?;
    Ok(PhaseRecord {
        step: t,
        phase,
        loss,
        decoder_lr,
        head_lr,
    })
}

/// One joint global step: a depth step, then an auxiliary step whose
/// gradient is taken at the parameters the depth step produced.
///
/// `aux_opt = None` runs both phases through `depth_opt`.
#[allow(clippy::too_many_arguments)]
pub fn joint_step<T, O, D, A>(
    params: &mut ParamStore<T>,
    depth_opt: &mut O,
    aux_opt: Option<&mut O>,
    plan: &LrPlan<T>,
    t: usize,
    depth_ids: PhaseParams<'_>,
    aux_ids: PhaseParams<'_>,
    depth_objective: D,
    aux_objective: A,
) -> Result<[PhaseRecord<T>; 2]>
where
    T: Scalar,
    O: Optimizer<T>,
    D: FnOnce(&ParamStore<T>) -> Result<(T, Gradients<T>)>,
    A: FnOnce(&ParamStore<T>) -> Result<(T, Gradients<T>)>,
{
    let depth = apply_phase(params, depth_opt, plan, Phase::Depth, t, depth_ids, depth_objective)?;
    let opt = match aux_opt {
        Some(o) => o,
        None => depth_opt,
    };
    let aux = apply_phase(params, opt, plan, Phase::Aux, t, aux_ids, aux_objective)?;
    Ok([depth, aux])
}
