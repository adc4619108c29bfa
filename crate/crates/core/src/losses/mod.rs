//! Training losses, recorded on a tape so they can be differentiated.
//!
//! Depth targets mark invalid pixels with values `<= 0` or non-finite;
//! class maps mark unlabeled pixels with [`IGNORE_ID`].

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IGNORE_ID: u16 = u16::MAX;

/// Probability floor and ceiling offset applied before the BCE logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Per-class values in `[0, 1]`; binary for targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelVector<T>(Vec<T>);

impl<T: Scalar> MultiLabelVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::invalid("multi-label entries must lie in [0, 1]"));
        }
        Ok(MultiLabelVector(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Valid pixels of a depth map: finite and strictly positive.
pub fn depth_validity<T: Scalar>(depth: &[T]) -> Vec<bool> {
    depth.iter().map(|&d| d.is_finite() && d > T::zero()).collect()
}

/// Masked L1: mean of `|pred - gt|` over valid pixels.
pub fn depth_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: &Tensor<T>, mask: &[bool]) -> Result<Var> {
    if tape.value(pred).len() != gt.len() {
        return Err(Error::shape("depth_loss", tape.shape(pred), gt.shape()));
    }
    if mask.len() != gt.len() {
        return Err(Error::shape("depth_loss", gt.shape(), &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask("depth_loss"));
    }
    if let Some(i) = (0..gt.len()).find(|&i| mask[i] && !gt.data()[i].is_finite()) {
        return Err(Error::NonFinite(format!("depth target at valid pixel {i}")));
    }
    // invalid pixels may hold anything; zero them so the residual stays finite
    let clean: Vec<T> = gt
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { T::zero() })
        .collect();
    let target = tape.constant(Tensor::new(tape.shape(pred).to_vec(), clean)?);
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    tape.masked_mean(abs, mask)
}

fn class_map_dims(op: &'static str, shape: &[usize], labels: &[u16]) -> Result<(usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::shape(op, shape, &[labels.len()]));
    }
    let pixels = shape[1] * shape[2];
    if labels.len() != pixels {
        return Err(Error::shape(op, shape, &[labels.len()]));
    }
    Ok((shape[0], pixels))
}

fn check_labels(op: &'static str, labels: &[u16], num_classes: usize, ignore_id: u16) -> Result<()> {
    if let Some(&bad) = labels
        .iter()
        .find(|&&l| l != ignore_id && l as usize >= num_classes)
    {
        return Err(Error::invalid(format!(
            "{op}: class id {bad} out of range for {num_classes} classes"
        )));
    }
    if labels.iter().all(|&l| l == ignore_id) {
        return Err(Error::EmptyMask(op));
    }
    Ok(())
}

/// Mean over labeled pixels of `-log softmax(logits)[label]`.
pub fn segmentation_ce<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[u16], ignore_id: u16) -> Result<Var> {
    let (k, pixels) = class_map_dims("segmentation_ce", tape.shape(logits), labels)?;
    check_labels("segmentation_ce", labels, k, ignore_id)?;
    let mut pick = vec![false; k * pixels];
    for (p, &l) in labels.iter().enumerate() {
        if l != ignore_id {
            pick[l as usize * pixels + p] = true;
        }
    }
    let logp = tape.log_softmax(logits, 0)?;
    let mean = tape.masked_mean(logp, &pick)?;
    Ok(tape.neg(mean))
}

/// Binary presence vector: entry `k` is one iff class `k` labels some pixel.
pub fn mldc_target<T: Scalar>(labels: &[u16], num_classes: usize, ignore_id: u16) -> Result<MultiLabelVector<T>> {
    check_labels("mldc_target", labels, num_classes, ignore_id)?;
    let mut present = vec![T::zero(); num_classes];
    for &l in labels.iter().filter(|&&l| l != ignore_id) {
        present[l as usize] = T::one();
    }
    MultiLabelVector::new(present)
}

/// Per-class spatial mean of per-pixel sigmoid probabilities, clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`. Returns a `[K]` vector.
pub fn mldc_prediction<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    if tape.shape(logits).len() != 3 {
        return Err(Error::shape("mldc_prediction", tape.shape(logits), &[]));
    }
    let probs = tape.sigmoid(logits);
    let mean = tape.spatial_mean(probs)?;
    let eps = T::lit(BCE_CLAMP);
    Ok(tape.clamp(mean, eps, T::one() - eps))
}

/// Mean binary cross-entropy between predicted and target presence vectors.
pub fn mldc_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &MultiLabelVector<T>) -> Result<Var> {
    let k = target.len();
    if tape.shape(pred) != [k] {
        return Err(Error::shape("mldc_loss", tape.shape(pred), &[k]));
    }
    let t = tape.constant(Tensor::new(vec![k], target.values().to_vec())?);
    let not_t = tape.constant(Tensor::new(vec![k], target.values().iter().map(|&v| T::one() - v).collect())?);
    let log_p = tape.ln(pred);
    let neg_p = tape.neg(pred);
    let q = tape.add_scalar(neg_p, T::one());
    let log_q = tape.ln(q);
    let a = tape.mul(t, log_p)?;
    let b = tape.mul(not_t, log_q)?;
    let ll = tape.add(a, b)?;
    let mean = tape.mean(ll)?;
    Ok(tape.neg(mean))
}

/// Most frequent labeled class; ties go to the smallest id.
pub fn dominant_class(labels: &[u16], num_classes: usize, ignore_id: u16) -> Result<u16> {
    check_labels("dominant_class", labels, num_classes, ignore_id)?;
    let mut counts = vec![0usize; num_classes];
    for &l in labels.iter().filter(|&&l| l != ignore_id) {
        counts[l as usize] += 1;
    }
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    Ok(best as u16)
}

/// Cross-entropy between spatially mean-pooled logits and the dominant class.
pub fn slc_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[u16], ignore_id: u16) -> Result<Var> {
    let (k, _) = class_map_dims("slc_loss", tape.shape(logits), labels)?;
    let target = dominant_class(labels, k, ignore_id)?;
    slc_loss_for_class(tape, logits, target)
}

/// Cross-entropy between spatially mean-pooled logits and a known class.
pub fn slc_loss_for_class<T: Scalar>(tape: &mut Tape<T>, logits: Var, class: u16) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape.len() != 3 {
        return Err(Error::shape("slc_loss", shape, &[]));
    }
    let k = shape[0];
    let target = class as usize;
    if target >= k {
        return Err(Error::invalid(format!("slc_loss: class {class} out of range for {k} classes")));
    }
    let pooled = tape.spatial_mean(logits)?;
    let logp = tape.log_softmax(pooled, 0)?;
    let mut pick = vec![false; k];
    pick[target] = true;
    let picked = tape.masked_sum(logp, &pick)?;
    Ok(tape.neg(picked))
}

/// Mean squared error against the input image.
pub fn reconstruction_mse<T: Scalar>(tape: &mut Tape<T>, pred: Var, image: &Tensor<T>) -> Result<Var> {
    if tape.shape(pred) != image.shape() {
        return Err(Error::shape("reconstruction_mse", tape.shape(pred), image.shape()));
    }
    let target = tape.constant(image.clone());
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}
