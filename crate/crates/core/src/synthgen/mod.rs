//! Deterministic synthetic scenes with correlated image, depth and labels.
//!
//! A scene is a tilted background plane of the farthest class with 3 to 8
//! axis-aligned rectangles and ellipses painted back to front. Every class has
//! a characteristic depth, its own colour, and image brightness falls off as
//! `1/depth`, so knowing which classes are present says a lot about depth.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_io::{write_tensor, DatasetManifest, LabelTensor, Role, SampleEntry, Split};
use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::seeding;
use crate::tensor::Tensor;

pub const SCENE_SPEC_FILE: &str = "scene_spec.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Relative spread of an object's depth around its class prior.
    pub depth_jitter: f64,
    /// Maximum relative depth change across the background plane.
    pub background_tilt: f64,
    /// Object half-extents in pixels.
    pub min_half_size: usize,
    pub max_half_size: usize,
    /// Depth at which shading saturates.
    pub reference_depth: f64,
    /// Relative range of the per-scene illumination gain.
    pub illumination_jitter: f64,
    pub noise_sigma: f64,
    pub invalid_min: f64,
    pub invalid_max: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            num_classes: 12,
            min_objects: 3,
            max_objects: 8,
            depth_min: 0.5,
            depth_max: 10.0,
            depth_jitter: 0.1,
            background_tilt: 0.1,
            min_half_size: 5,
            max_half_size: 18,
            reference_depth: 1.0,
            illumination_jitter: 0.2,
            noise_sigma: 0.02,
            invalid_min: 0.02,
            invalid_max: 0.10,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 {
            return bad("scene height and width must be positive".into());
        }
        if self.num_classes < 2 || self.num_classes >= crate::losses::IGNORE_ID as usize {
            return bad(format!("num_classes must lie in 2..65535, got {}", self.num_classes));
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects".into());
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max) {
            return bad("need 0 < depth_min < depth_max".into());
        }
        if !(0.0..=1.0).contains(&self.invalid_min)
            || !(0.0..=1.0).contains(&self.invalid_max)
            || self.invalid_min > self.invalid_max
        {
            return bad("invalid fractions must satisfy 0 <= min <= max <= 1".into());
        }
        if self.min_half_size == 0 || self.min_half_size > self.max_half_size {
            return bad("object half sizes must satisfy 0 < min <= max".into());
        }
        for (name, v) in [
            ("depth_jitter", self.depth_jitter),
            ("background_tilt", self.background_tilt),
            ("illumination_jitter", self.illumination_jitter),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.reference_depth > 0.0) {
            return bad("noise_sigma must be >= 0 and reference_depth > 0".into());
        }
        Ok(())
    }

    /// Characteristic depth of class `k`; geometric from near to far, with
    /// the last class (the background) farthest.
    pub fn class_depth(&self, k: usize) -> f64 {
        let lo = self.depth_min / (1.0 - self.depth_jitter.max(self.background_tilt));
        let hi = self.depth_max / (1.0 + self.depth_jitter.max(self.background_tilt));
        let t = k as f64 / (self.num_classes - 1) as f64;
        lo * (hi / lo).powf(t)
    }

    pub fn background_class(&self) -> u16 {
        (self.num_classes - 1) as u16
    }

    /// RGB colour of class `k`: evenly spaced hues.
    pub fn class_colour(&self, k: usize) -> [f64; 3] {
        let h = 6.0 * k as f64 / self.num_classes as f64;
        let (s, v) = (0.75, 1.0);
        let c = v * s;
        let x = c * (1.0 - (h % 2.0 - 1.0).abs());
        let (r, g, b) = match h as usize {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = v - c;
        [r + m, g + m, b + m]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy)]
struct Object {
    class: u16,
    depth: f64,
    shape: Shape,
    cy: f64,
    cx: f64,
    hy: f64,
    hx: f64,
}

impl Object {
    fn covers(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.cy) / self.hy;
        let dx = (x as f64 + 0.5 - self.cx) / self.hx;
        match self.shape {
            Shape::Rect => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            Shape::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }
}

/// One rendered scene in storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[H, W]`; `0` marks invalid pixels.
    pub depth: Tensor<f32>,
    pub seg: LabelTensor,
    /// Depth before invalid regions were cut out.
    pub full_depth: Tensor<f32>,
}

/// Renders scene `index` of the dataset generated with `seed`.
pub fn render(spec: &SceneSpec, seed: u64, index: u64) -> Result<RenderedScene> {
    spec.validate()?;
    let (h, w, k) = (spec.height, spec.width, spec.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, index));
    let bg = spec.background_class();
    let bg_depth = spec.class_depth(bg as usize);
    let tilt_y = rng.gen_range(-spec.background_tilt..=spec.background_tilt);
    let tilt_x = rng.gen_range(-spec.background_tilt..=spec.background_tilt) * 0.5;
    let mut depth = vec![0.0f64; h * w];
    let mut seg = vec![bg; h * w];
    for y in 0..h {
        for x in 0..w {
            let ry = (y as f64 + 0.5) / h as f64 - 0.5;
            let rx = (x as f64 + 0.5) / w as f64 - 0.5;
            depth[y * w + x] = bg_depth * (1.0 + tilt_y * ry + tilt_x * rx);
        }
    }
    let n_obj = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut objects: Vec<Object> = (0..n_obj)
        .map(|_| {
            let class = rng.gen_range(0..k - 1) as u16;
            let jitter = rng.gen_range(-spec.depth_jitter..=spec.depth_jitter);
            let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
            Object {
                class,
                depth: spec.class_depth(class as usize) * (1.0 + jitter),
                shape,
                cy: rng.gen_range(0.0..h as f64),
                cx: rng.gen_range(0.0..w as f64),
                hy: rng.gen_range(spec.min_half_size..=spec.max_half_size) as f64,
                hx: rng.gen_range(spec.min_half_size..=spec.max_half_size) as f64,
            }
        })
        .collect();
    // painter's order: farthest first
    objects.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for obj in &objects {
        for y in 0..h {
            for x in 0..w {
                if obj.covers(y, x) {
                    depth[y * w + x] = obj.depth;
                    seg[y * w + x] = obj.class;
                }
            }
        }
    }
    for d in &mut depth {
        *d = d.clamp(spec.depth_min, spec.depth_max);
    }

    let gain = 1.0 + rng.gen_range(-spec.illumination_jitter..=spec.illumination_jitter);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let colours: Vec<[f64; 3]> = (0..k).map(|c| spec.class_colour(c)).collect();
    let mut image = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for i in 0..h * w {
            let shade = (spec.reference_depth / depth[i]).min(1.0) * gain;
            let v = colours[seg[i] as usize][c] * shade + noise.sample(&mut rng);
            image[c * h * w + i] = v.clamp(0.0, 1.0) as f32;
        }
    }

    let full_depth: Vec<f32> = depth.iter().map(|&d| d as f32).collect();
    let mut cut = full_depth.clone();
    let frac = rng.gen_range(spec.invalid_min..=spec.invalid_max);
    let target = ((frac * (h * w) as f64).ceil() as usize).min(h * w);
    let mut marked = 0;
    while marked < target {
        let r = rng.gen_range(2.0..6.0f64);
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        'blob: for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r * r && cut[y * w + x] > 0.0 {
                    cut[y * w + x] = 0.0;
                    marked += 1;
                    if marked == target {
                        break 'blob;
                    }
                }
            }
        }
    }
    Ok(RenderedScene {
        image: Tensor::new(vec![3, h, w], image)?,
        depth: Tensor::new(vec![h, w], cut)?,
        seg: LabelTensor::new(vec![h, w], seg)?,
        full_depth: Tensor::new(vec![h, w], full_depth)?,
    })
}

fn sample_paths(i: usize) -> (String, String, String) {
    (
        format!("images/{i:05}.dten"),
        format!("depth/{i:05}.dten"),
        format!("seg/{i:05}.dten"),
    )
}

/// Renders `n` scenes into `out_dir` and writes the manifest and scene spec.
///
/// Scenes are rendered on up to `jobs` threads; each scene depends only on
/// `(spec, seed, index)`, so the output is the same for any `jobs`.
pub fn generate(spec: &SceneSpec, n: usize, seed: u64, out_dir: impl AsRef<Path>, jobs: usize) -> Result<DatasetManifest> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("need at least one scene"));
    }
    let out = out_dir.as_ref();
    for sub in ["images", "depth", "seg"] {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    crate::jobs::run_jobs(jobs, n, |i| {
        let scene = render(spec, seed, i as u64)?;
        let (img, dep, seg) = sample_paths(i);
        write_tensor(out.join(img), &scene.image.into())?;
        write_tensor(out.join(dep), &scene.depth.into())?;
        write_tensor(out.join(seg), &scene.seg.into())
    })?;
    let samples = (0..n)
        .map(|i| {
            let (image, depth, seg) = sample_paths(i);
            SampleEntry {
                id: format!("scene-{i:05}"),
                image,
                depth: Some(depth),
                seg: Some(seg),
                presence: None,
                dominant: None,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        name: "synthetic".into(),
        role: Role::Depth,
        tasks: vec![
            TaskKind::Depth,
            TaskKind::Segmentation,
            TaskKind::Mldc,
            TaskKind::Slc,
            TaskKind::Reconstruction,
        ],
        num_classes: spec.num_classes,
        height: spec.height,
        width: spec.width,
        split: Split::All,
        samples,
        excluded: Vec::new(),
        base_dir: out.to_path_buf(),
    };
    manifest.save(out.join(MANIFEST_FILE))?;
    let spec_path = out.join(SCENE_SPEC_FILE);
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

/// Disjoint, covering train/test split; each keeps the original order.
pub fn split(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    let n = manifest.len();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} of {n} samples leaves an empty split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeding::derive(seed, "split")));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let pick = |want: bool, split: Split| {
        let mut m = manifest.with_samples(
            (0..n)
                .filter(|&i| is_train[i] == want)
                .map(|i| manifest.samples[i].clone())
                .collect(),
        );
        m.split = split;
        m
    };
    Ok((pick(true, Split::Train), pick(false, Split::Test)))
}
