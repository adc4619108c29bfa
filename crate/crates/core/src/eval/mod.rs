//! Depth metrics, error maps and report aggregation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::Sample;
use crate::error::{Error, Result};
use crate::losses::depth_validity;
use crate::model::{Model, DEPTH_HEAD};
use crate::scalar::Scalar;

/// Mean of `|pred - gt| / gt` over valid pixels, summed in row-major order.
pub fn absrel_image<T: Scalar>(pred: &[T], gt: &[T], mask: &[bool]) -> Result<f64> {
    let map = error_map(pred, gt, mask, 1, pred.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &m) in map.values.iter().zip(&map.mask) {
        if m {
            sum += v;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Per-pixel absolute relative error, defined on `mask` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    /// Zero at invalid pixels.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn error_map<T: Scalar>(pred: &[T], gt: &[T], mask: &[bool], height: usize, width: usize) -> Result<ErrorMap> {
    let n = height * width;
    if pred.len() != n || gt.len() != n || mask.len() != n {
        return Err(Error::shape("error_map", &[pred.len(), gt.len(), mask.len()], &[height, width]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask("absrel"));
    }
    let mut values = vec![0.0; n];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let g = gt[i].to_f64().unwrap_or(f64::NAN);
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::invalid(format!("absrel: ground truth {g} at valid pixel {i}")));
        }
        let p = pred[i].to_f64().unwrap_or(f64::NAN);
        values[i] = (p - g).abs() / g;
    }
    Ok(ErrorMap {
        height,
        width,
        values,
        mask: mask.to_vec(),
    })
}

impl ErrorMap {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: ErrorMap = serde_json::from_str(&text)?;
        let n = map.height * map.width;
        if map.values.len() != n || map.mask.len() != n {
            return Err(Error::Format(format!("{}: error map size does not match its extents", path.display())));
        }
        Ok(map)
    }
}

/// Signed map `baseline - ours`; positive where ours is closer to the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn error_diff_map(baseline: &ErrorMap, ours: &ErrorMap) -> Result<DiffMap> {
    if (baseline.height, baseline.width) != (ours.height, ours.width) || baseline.mask != ours.mask {
        return Err(Error::invalid("error maps have different validity masks"));
    }
    let values = baseline
        .values
        .iter()
        .zip(&ours.values)
        .zip(&baseline.mask)
        .map(|((b, o), &m)| if m { b - o } else { 0.0 })
        .collect();
    Ok(DiffMap {
        height: baseline.height,
        width: baseline.width,
        values,
        mask: baseline.mask.clone(),
    })
}

impl DiffMap {
    /// Binary PPM (`P6`, maxval 255). Positive values go to the green
    /// channel, negative ones to red, both scaled by the largest magnitude;
    /// invalid pixels are black.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        let scale = self
            .values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold(0.0f64, |acc, (v, _)| acc.max(v.abs()));
        for (&v, &m) in self.values.iter().zip(&self.mask) {
            let level = if m && scale > 0.0 {
                (v.abs() / scale * 255.0).round() as u8
            } else {
                0
            };
            let px = if v > 0.0 { [0, level, 0] } else { [level, 0, 0] };
            out.extend_from_slice(&px);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// `(baseline - ours) / baseline * 100`.
pub fn gain_percent(baseline: f64, ours: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid(format!("baseline metric must be positive, got {baseline}")));
    }
    Ok((baseline - ours) / baseline * 100.0)
}

/// Rounds to one decimal, half away from zero.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: Option<u64>,
    /// Mean of the per-image values.
    pub absrel: f64,
    pub absrel_x1e4: f64,
    pub n_images: usize,
    pub per_image: Vec<f64>,
}

impl EvalReport {
    pub fn from_per_image(dataset: impl Into<String>, seed: Option<u64>, per_image: Vec<f64>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::invalid("no images to evaluate"));
        }
        let absrel = per_image.iter().sum::<f64>() / per_image.len() as f64;
        Ok(EvalReport {
            dataset: dataset.into(),
            seed,
            absrel,
            absrel_x1e4: absrel * 1e4,
            n_images: per_image.len(),
            per_image,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Depth prediction of `model` for one sample.
pub fn predict_depth<T: Scalar>(model: &Model<T>, sample: &Sample<T>) -> Result<Vec<T>> {
    Ok(model.predict(&sample.image, DEPTH_HEAD)?.into_data())
}

/// Error map of the depth prediction for one sample with ground truth.
pub fn sample_error_map<T: Scalar>(model: &Model<T>, sample: &Sample<T>) -> Result<ErrorMap> {
    let gt = sample
        .depth
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{}: no depth ground truth", sample.id)))?;
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let pred = predict_depth(model, sample)?;
    error_map(&pred, gt.data(), &depth_validity(gt.data()), h, w)
}

/// Per-image AbsRel over `samples` in order, averaged without pixel pooling.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample<T>], dataset: &str, seed: Option<u64>) -> Result<EvalReport> {
    let per_image = samples
        .iter()
        .map(|s| {
            let map = sample_error_map(model, s)?;
            let n = map.mask.iter().filter(|&&m| m).count();
            Ok(map.values.iter().sum::<f64>() / n as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_per_image(dataset, seed, per_image)
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!("standard error needs at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}
