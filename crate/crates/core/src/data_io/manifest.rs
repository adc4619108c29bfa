use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor, LabelTensor};
use crate::error::{Error, Result};
use crate::losses::IGNORE_ID;
use crate::model::TaskKind;
use crate::scalar::Scalar;
use crate::seeding;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Depth,
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

/// One sample's files, relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg: Option<String>,
    /// `u16` 0/1 class presence vector of length `num_classes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// JSON dataset description. All paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub role: Role,
    pub tasks: Vec<TaskKind>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub split: Split,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<Exclusion>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// An in-memory sample. Depth uses `<= 0` or non-finite for invalid pixels;
/// segmentation uses [`IGNORE_ID`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub image: Tensor<T>,
    pub depth: Option<Tensor<T>>,
    pub seg: Option<Vec<u16>>,
    pub presence: Option<Vec<u16>>,
    pub dominant: Option<u16>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Writes pretty JSON to `path`. Sample paths are stored as given.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_task(&self, task: TaskKind) -> bool {
        self.tasks.contains(&task)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Same manifest with a different sample list.
    pub fn with_samples(&self, samples: Vec<SampleEntry>) -> Self {
        DatasetManifest {
            samples,
            ..self.clone()
        }
    }

    pub fn load_sample<T: Scalar>(&self, index: usize) -> Result<Sample<T>> {
        let entry = self
            .samples
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))?;
        let (h, w) = (self.height, self.width);
        let image: Tensor<T> = read_tensor(self.resolve(&entry.image))?.into_float()?;
        check_shape(&entry.id, "image", image.shape(), &[3, h, w])?;
        let depth = match &entry.depth {
            Some(p) => {
                let d: Tensor<T> = read_tensor(self.resolve(p))?.into_float()?;
                check_shape(&entry.id, "depth", d.shape(), &[h, w])?;
                Some(d)
            }
            None => None,
        };
        let seg = match &entry.seg {
            Some(p) => {
                let s = read_tensor(self.resolve(p))?.into_labels()?;
                check_shape(&entry.id, "seg", &s.shape, &[h, w])?;
                if let Some(&bad) = s.data.iter().find(|&&c| c != IGNORE_ID && c as usize >= self.num_classes) {
                    return Err(Error::Format(format!(
                        "{}: label {bad} outside 0..{}",
                        entry.id, self.num_classes
                    )));
                }
                Some(s.data)
            }
            None => None,
        };
        let presence = match &entry.presence {
            Some(p) => {
                let v = read_tensor(self.resolve(p))?.into_labels()?;
                check_shape(&entry.id, "presence", &v.shape, &[self.num_classes])?;
                Some(v.data)
            }
            None => None,
        };
        Ok(Sample {
            id: entry.id.clone(),
            image,
            depth,
            seg,
            presence,
            dominant: entry.dominant,
        })
    }

    /// Loads every sample in manifest order.
    pub fn load_all<T: Scalar>(&self) -> Result<Vec<Sample<T>>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }

    /// Loads everything and checks per-role requirements.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes >= IGNORE_ID as usize {
            return Err(Error::Config(format!("num_classes {} out of range", self.num_classes)));
        }
        let mut ids = BTreeSet::new();
        for i in 0..self.len() {
            let s: Sample<f32> = self.load_sample(i)?;
            if !ids.insert(s.id.clone()) {
                return Err(Error::Format(format!("duplicate sample id '{}'", s.id)));
            }
            if self.role == Role::Depth {
                let d = s
                    .depth
                    .ok_or_else(|| Error::Format(format!("{}: depth sample without depth map", s.id)))?;
                if !d.data().iter().any(|v| v.is_finite() && *v > 0.0) {
                    return Err(Error::Format(format!("{}: no valid depth pixel", s.id)));
                }
            }
        }
        Ok(())
    }
}

fn check_shape(id: &str, what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!("{id}: {what} has shape {got:?}, expected {want:?}")));
    }
    Ok(())
}

/// Number of entries kept by [`subset_fraction`].
pub fn subset_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    // a tiny slack keeps products like 0.07 * 100 from rounding up a whole entry
    let k = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        return Err(Error::invalid(format!("fraction {fraction} of {n} samples is empty")));
    }
    Ok(k.min(n))
}

/// Seeded subset of `ceil(fraction * N)` entries in original order.
///
/// The kept entries are a prefix of one seeded permutation, so for a fixed
/// seed smaller fractions always select subsets of larger ones.
pub fn subset_fraction(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let n = manifest.len();
    let k = subset_size(n, fraction)?;
    if k == n {
        return Ok(manifest.clone());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeding::derive(seed, "subset")));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(manifest.with_samples(keep.into_iter().map(|i| manifest.samples[i].clone()).collect()))
}

/// Presence vector and dominant class of one label map, or `None` when every
/// pixel is ignored.
pub fn presence_and_dominant(labels: &[u16], num_classes: usize) -> Result<Option<(Vec<u16>, u16)>> {
    if labels.iter().all(|&c| c == IGNORE_ID) {
        return Ok(None);
    }
    let presence = crate::losses::mldc_target::<f64>(labels, num_classes, IGNORE_ID)?
        .values()
        .iter()
        .map(|&v| v as u16)
        .collect();
    let dominant = crate::losses::dominant_class(labels, num_classes, IGNORE_ID)?;
    Ok(Some((presence, dominant)))
}

/// Repurposes a segmentation dataset for multi-label and single-label dense
/// classification.
///
/// Writes, per sample, a copy of the image and a `u16` presence vector, and
/// records the dominant class in the new manifest. Samples whose mask is
/// entirely ignored are skipped with a warning and listed as excluded.
pub fn mldc_export(seg: &DatasetManifest, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&out_dir.join("images"))?;
    mkdir(&out_dir.join("presence"))?;
    let mut samples = Vec::new();
    let mut excluded = seg.excluded.clone();
    for (i, entry) in seg.samples.iter().enumerate() {
        let path = entry
            .seg
            .as_ref()
            .ok_or_else(|| Error::Format(format!("{}: no segmentation labels", entry.id)))?;
        let labels = read_tensor(seg.resolve(path))?.into_labels()?;
        let Some((presence, dominant)) = presence_and_dominant(&labels.data, seg.num_classes)? else {
            log::warn!("skipping sample '{}': every pixel is ignored", entry.id);
            excluded.push(Exclusion {
                id: entry.id.clone(),
                reason: "all pixels ignored".into(),
            });
            continue;
        };
        let image_rel = format!("images/{i:05}.dten");
        let presence_rel = format!("presence/{i:05}.dten");
        let src = seg.resolve(&entry.image);
        let dst = out_dir.join(&image_rel);
        fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        super::write_tensor(
            out_dir.join(&presence_rel),
            &LabelTensor::new(vec![seg.num_classes], presence)?.into(),
        )?;
        samples.push(SampleEntry {
            id: entry.id.clone(),
            image: image_rel,
            depth: None,
            seg: None,
            presence: Some(presence_rel),
            dominant: Some(dominant),
        });
    }
    let manifest = DatasetManifest {
        name: format!("{}-mldc", seg.name),
        role: Role::Auxiliary,
        tasks: vec![TaskKind::Mldc, TaskKind::Slc],
        num_classes: seg.num_classes,
        height: seg.height,
        width: seg.width,
        split: seg.split,
        samples,
        excluded,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
