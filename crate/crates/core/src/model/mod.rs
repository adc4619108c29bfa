//! Predictors `depth(x) = head_depth(decoder(encoder(x)))` and
//! `aux(x) = head_aux(decoder(encoder(x)))` sharing one decoder.

mod encoder;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encoder::FrozenEncoder;
pub use params::{Binding, Gradients, Param, ParamGroup, ParamId, ParamStore};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding;
use crate::tensor::Tensor;

/// Identifier of the depth head.
pub const DEPTH_HEAD: &str = "depth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Depth,
    Segmentation,
    Mldc,
    Slc,
    Reconstruction,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Depth => "depth",
            TaskKind::Segmentation => "segmentation",
            TaskKind::Mldc => "mldc",
            TaskKind::Slc => "slc",
            TaskKind::Reconstruction => "reconstruction",
        }
    }

    /// Output channels for a head of this kind with `num_classes` classes.
    pub fn channels(self, num_classes: usize, image_channels: usize) -> usize {
        match self {
            TaskKind::Depth => 1,
            TaskKind::Segmentation | TaskKind::Mldc | TaskKind::Slc => num_classes,
            TaskKind::Reconstruction => image_channels,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "depth" => TaskKind::Depth,
            "segmentation" | "seg" => TaskKind::Segmentation,
            "mldc" => TaskKind::Mldc,
            "slc" => TaskKind::Slc,
            "reconstruction" | "recon" => TaskKind::Reconstruction,
            other => return Err(Error::invalid(format!("unknown task '{other}'"))),
        })
    }
}

/// Architecture hyperparameters; stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Output channels of each decoder stage; one stage per 2x upsample.
    pub decoder_dims: Vec<usize>,
    pub encoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            patch_size: 8,
            embed_dim: 64,
            decoder_dims: vec![48, 40, 32],
            encoder_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p < 2 || !p.is_power_of_two() {
            return Err(Error::Config(format!("patch_size must be a power of two >= 2, got {p}")));
        }
        let stages = p.trailing_zeros() as usize;
        if self.decoder_dims.len() != stages {
            return Err(Error::Config(format!(
                "patch_size {p} needs {stages} decoder stages, got {}",
                self.decoder_dims.len()
            )));
        }
        if self.in_channels == 0 || self.embed_dim == 0 || self.decoder_dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn decoder_dim(&self) -> usize {
        *self.decoder_dims.last().expect("validated")
    }
}

/// Declares one task head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub id: String,
    pub kind: TaskKind,
    pub channels: usize,
    /// Source dataset for per-dataset auxiliary heads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
}

impl HeadSpec {
    pub fn depth() -> Self {
        HeadSpec {
            id: DEPTH_HEAD.into(),
            kind: TaskKind::Depth,
            channels: 1,
            dataset_id: None,
        }
    }

    pub fn aux(id: impl Into<String>, kind: TaskKind, num_classes: usize, dataset_id: Option<String>) -> Self {
        HeadSpec {
            id: id.into(),
            kind,
            channels: kind.channels(num_classes, 3),
            dataset_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Shared trunk: (affine, relu, 2x upsample) per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedDecoder {
    pub stages: Vec<DecoderStage>,
}

impl SharedDecoder {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Binding, features: Var) -> Result<Var> {
        let mut h = features;
        for stage in &self.stages {
            h = tape.affine(h, bind.var(stage.weight), bind.var(stage.bias))?;
            h = tape.relu(h);
            h = tape.upsample2x(h)?;
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(|s| [s.weight, s.bias]).collect()
    }
}

/// A single pointwise affine map plus the output activation of its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub spec: HeadSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TaskHead {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Binding, trunk: Var) -> Result<Var> {
        let out = tape.affine(trunk, bind.var(self.weight), bind.var(self.bias))?;
        Ok(match self.spec.kind {
            TaskKind::Depth => tape.softplus(out),
            _ => out,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    encoder: FrozenEncoder<T>,
    params: ParamStore<T>,
    decoder: SharedDecoder,
    depth_head: TaskHead,
    aux_heads: Vec<TaskHead>,
}

fn affine_param<T: Scalar>(
    store: &mut ParamStore<T>,
    seed: u64,
    prefix: &str,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    let wname = format!("{prefix}.weight");
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &wname));
    let w = Tensor::from_fn(&[fan_out, fan_in], |_| T::lit(rng.gen_range(-bound..=bound)));
    let wid = store.push(wname, group.clone(), w);
    let bid = store.push(format!("{prefix}.bias"), group, Tensor::zeros(&[fan_out]));
    (wid, bid)
}

impl<T: Scalar> Model<T> {
    /// Builds a model with freshly initialized decoder and heads.
    ///
    /// Each weight is drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` using a
    /// stream keyed by `seed` and the parameter name, so adding heads never
    /// perturbs the initialization of the others. Biases start at zero.
    pub fn init(config: ModelConfig, aux_heads: Vec<HeadSpec>, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = FrozenEncoder::new(
            config.in_channels,
            config.patch_size,
            config.embed_dim,
            config.encoder_seed,
        )?;
        let mut params = ParamStore::new();
        let mut stages = Vec::new();
        let mut fan_in = config.embed_dim;
        for (i, &dim) in config.decoder_dims.iter().enumerate() {
            let (weight, bias) =
                affine_param(&mut params, seed, &format!("decoder.{i}"), ParamGroup::Decoder, fan_in, dim);
            stages.push(DecoderStage { weight, bias });
            fan_in = dim;
        }
        let make_head = |spec: HeadSpec, params: &mut ParamStore<T>| -> Result<TaskHead> {
            if spec.channels == 0 {
                return Err(Error::Config(format!("head '{}' has no output channels", spec.id)));
            }
            let (weight, bias) = affine_param(
                params,
                seed,
                &format!("head.{}", spec.id),
                ParamGroup::Head(spec.id.clone()),
                fan_in,
                spec.channels,
            );
            Ok(TaskHead { spec, weight, bias })
        };
        let depth_head = make_head(HeadSpec::depth(), &mut params)?;
        let mut heads: Vec<TaskHead> = Vec::new();
        for spec in aux_heads {
            if spec.kind == TaskKind::Depth {
                return Err(Error::Config("auxiliary heads cannot be depth heads".into()));
            }
            if spec.id == DEPTH_HEAD || heads.iter().any(|h| h.spec.id == spec.id) {
                return Err(Error::Config(format!("duplicate head id '{}'", spec.id)));
            }
            heads.push(make_head(spec, &mut params)?);
        }
        Ok(Model {
            config,
            encoder,
            params,
            decoder: SharedDecoder { stages },
            depth_head,
            aux_heads: heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &FrozenEncoder<T> {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn decoder(&self) -> &SharedDecoder {
        &self.decoder
    }

    pub fn depth_head(&self) -> &TaskHead {
        &self.depth_head
    }

    pub fn aux_heads(&self) -> &[TaskHead] {
        &self.aux_heads
    }

    pub fn head_specs(&self) -> Vec<HeadSpec> {
        self.aux_heads.iter().map(|h| h.spec.clone()).collect()
    }

    pub fn head(&self, id: &str) -> Result<&TaskHead> {
        if id == DEPTH_HEAD {
            return Ok(&self.depth_head);
        }
        self.aux_heads
            .iter()
            .find(|h| h.spec.id == id)
            .ok_or_else(|| Error::UnknownHead(id.to_string()))
    }

    /// Auxiliary head fed by the dataset `dataset_id`.
    pub fn head_for_dataset(&self, dataset_id: &str) -> Result<&TaskHead> {
        self.aux_heads
            .iter()
            .find(|h| h.spec.dataset_id.as_deref() == Some(dataset_id))
            .ok_or_else(|| Error::UnknownHead(format!("no head for dataset '{dataset_id}'")))
    }

    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.encode(image)
    }

    /// Records decoder and head on `tape` for already-encoded features.
    pub fn forward_features(&self, tape: &mut Tape<T>, bind: &Binding, features: &Tensor<T>, head: &str) -> Result<Var> {
        let head = self.head(head)?;
        let f = tape.constant(features.clone());
        let trunk = self.decoder.forward(tape, bind, f)?;
        head.forward(tape, bind, trunk)
    }

    pub fn forward(&self, tape: &mut Tape<T>, bind: &Binding, image: &Tensor<T>, head: &str) -> Result<Var> {
        let features = self.encode(image)?;
        self.forward_features(tape, bind, &features, head)
    }

    /// Gradient-free prediction of `head` for one `[C, H, W]` image.
    pub fn predict(&self, image: &Tensor<T>, head: &str) -> Result<Tensor<T>> {
        self.head(head)?;
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &bind, image, head)?;
        Ok(tape.value(out).clone())
    }

    /// Decoder parameters plus those of the named head.
    pub fn trainable_ids(&self, head: &str) -> Result<Vec<ParamId>> {
        let mut ids = self.decoder.param_ids();
        ids.extend(self.head(head)?.param_ids());
        Ok(ids)
    }

    /// Flattened copy of the given parameters, in order.
    pub fn flat_params(&self, ids: &[ParamId]) -> Vec<T> {
        ids.iter().flat_map(|&id| self.params.value(id).data().iter().copied()).collect()
    }
}

/// Double-precision model used by the trainer.
pub type Model64 = Model<f64>;
