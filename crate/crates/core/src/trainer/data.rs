use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::data_io::{subset_fraction, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::losses::{self, depth_validity, MultiLabelVector, IGNORE_ID};
use crate::model::{Gradients, Model, ParamStore, TaskKind};
use crate::tensor::Tensor;

/// A sample with precomputed encoder features and loss targets.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub features: Tensor<f64>,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub(crate) enum Target {
    Depth { gt: Tensor<f64>, mask: Vec<bool> },
    Segmentation(Vec<u16>),
    Mldc(MultiLabelVector<f64>),
    Slc(u16),
    Reconstruction(Tensor<f64>),
}

/// An auxiliary dataset routed to its own head.
#[derive(Debug, Clone)]
pub(crate) struct AuxSet {
    pub dataset_id: String,
    pub samples: Vec<Prepared>,
}

pub(crate) fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    if m.is_empty() {
        return Err(Error::invalid(format!("{}: manifest has no samples", path.display())));
    }
    Ok(m)
}

pub(crate) fn depth_manifest(path: &Path, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let m = load_manifest(path)?;
    if !m.has_task(TaskKind::Depth) {
        return Err(Error::invalid(format!("{}: no depth labels", path.display())));
    }
    subset_fraction(&m, fraction, seed)
}

pub(crate) fn prepare_depth(model: &Model<f64>, manifest: &DatasetManifest) -> Result<Vec<Prepared>> {
    manifest
        .load_all::<f64>()?
        .into_iter()
        .map(|s| {
            let gt = s
                .depth
                .ok_or_else(|| Error::Format(format!("{}: depth sample without depth map", s.id)))?;
            let mask = depth_validity(gt.data());
            if !mask.iter().any(|&m| m) {
                return Err(Error::Format(format!("{}: no valid depth pixel", s.id)));
            }
            Ok(Prepared {
                features: model.encode(&s.image)?,
                target: Target::Depth { gt, mask },
            })
        })
        .collect()
}

fn aux_target(kind: TaskKind, s: &Sample<f64>, num_classes: usize) -> Result<Option<Target>> {
    let labels = || {
        s.seg
            .clone()
            .ok_or_else(|| Error::Format(format!("{}: {} needs segmentation labels", s.id, kind.name())))
    };
    let all_ignored = |l: &[u16]| l.iter().all(|&c| c == IGNORE_ID);
    Ok(match kind {
        TaskKind::Depth => return Err(Error::Config("depth is not an auxiliary task".into())),
        TaskKind::Reconstruction => Some(Target::Reconstruction(s.image.clone())),
        TaskKind::Segmentation => {
            let l = labels()?;
            (!all_ignored(&l)).then_some(Target::Segmentation(l))
        }
        TaskKind::Mldc => match &s.presence {
            Some(p) => Some(Target::Mldc(MultiLabelVector::new(p.iter().map(|&v| v as f64).collect())?)),
            None => {
                let l = labels()?;
                if all_ignored(&l) {
                    None
                } else {
                    Some(Target::Mldc(losses::mldc_target(&l, num_classes, IGNORE_ID)?))
                }
            }
        },
        TaskKind::Slc => match s.dominant {
            Some(c) => Some(Target::Slc(c)),
            None => {
                let l = labels()?;
                if all_ignored(&l) {
                    None
                } else {
                    Some(Target::Slc(losses::dominant_class(&l, num_classes, IGNORE_ID)?))
                }
            }
        },
    })
}

pub(crate) fn prepare_aux(model: &Model<f64>, manifest: &DatasetManifest, kind: TaskKind) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(manifest.len());
    for s in manifest.load_all::<f64>()? {
        match aux_target(kind, &s, manifest.num_classes)? {
            Some(target) => out.push(Prepared {
                features: model.encode(&s.image)?,
                target,
            }),
            None => log::warn!("{}: every pixel is ignored, sample skipped", s.id),
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("auxiliary dataset '{}' has no usable samples", manifest.name)));
    }
    Ok(out)
}

fn sample_loss(tape: &mut Tape<f64>, out: Var, target: &Target) -> Result<Var> {
    match target {
        Target::Depth { gt, mask } => losses::depth_loss(tape, out, gt, mask),
        Target::Segmentation(l) => losses::segmentation_ce(tape, out, l, IGNORE_ID),
        Target::Mldc(p) => {
            let pred = losses::mldc_prediction(tape, out)?;
            losses::mldc_loss(tape, pred, p)
        }
        Target::Slc(c) => losses::slc_loss_for_class(tape, out, *c),
        Target::Reconstruction(img) => losses::reconstruction_mse(tape, out, img),
    }
}

/// Mean loss over `batch` through `head` at `params`, and its gradients.
/// Only the structure of `model` is used; its own parameter values are not.
pub(crate) fn batch_objective(
    model: &Model<f64>,
    params: &ParamStore<f64>,
    head: &str,
    batch: &[&Prepared],
) -> Result<(f64, Gradients<f64>)> {
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let mut total: Option<Var> = None;
    for p in batch {
        let out = model.forward_features(&mut tape, &bind, &p.features, head)?;
        let l = sample_loss(&mut tape, out, &p.target)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("empty batch"))?;
    let mean = tape.mul_scalar(total, 1.0 / batch.len() as f64);
    tape.backward(mean)?;
    Ok((tape.value(mean).item(), bind.grads(&tape)))
}
