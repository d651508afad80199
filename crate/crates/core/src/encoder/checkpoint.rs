use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::container::{self, TensorMap};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::SplitMix64;

/// CLIP's published RGB normalisation constants.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    QuickGelu,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Gelu => crate::numerics::gelu(x),
            Activation::QuickGelu => crate::numerics::quick_gelu(x),
        }
    }
}

/// Where a fused checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeProvenance {
    pub sources: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pvsm: Option<Vec<f64>>,
}

/// JSON metadata stored after the tensors of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_id: String,
    pub dim: usize,
    pub layers: usize,
    pub patch: usize,
    pub heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_mean")]
    pub image_mean: [f32; 3],
    #[serde(default = "default_std")]
    pub image_std: [f32; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeProvenance>,
    /// Unrecognised keys, kept so that load → save is lossless.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn default_mlp_ratio() -> usize {
    4
}
fn default_mean() -> [f32; 3] {
    CLIP_MEAN
}
fn default_std() -> [f32; 3] {
    CLIP_STD
}

pub mod names {
    pub const PATCH_WEIGHT: &str = "visual.patch_embed.weight";
    pub const PATCH_BIAS: &str = "visual.patch_embed.bias";
    pub const CLS: &str = "visual.cls_token";
    pub const POS: &str = "visual.pos_embed";
    pub const LN_PRE_W: &str = "visual.ln_pre.weight";
    pub const LN_PRE_B: &str = "visual.ln_pre.bias";
    pub const LN_POST_W: &str = "visual.ln_post.weight";
    pub const LN_POST_B: &str = "visual.ln_post.bias";
    pub const PROJ: &str = "visual.proj";

    pub fn block(layer: usize, param: &str) -> String {
        format!("visual.blocks.{layer}.{param}")
    }

    pub const BLOCK_PARAMS: [&str; 12] = [
        "ln_1.weight",
        "ln_1.bias",
        "attn.qkv.weight",
        "attn.qkv.bias",
        "attn.out.weight",
        "attn.out.bias",
        "ln_2.weight",
        "ln_2.bias",
        "mlp.fc1.weight",
        "mlp.fc1.bias",
        "mlp.fc2.weight",
        "mlp.fc2.bias",
    ];
}

/// Named parameter tensors plus metadata.
///
/// Vision-tower tensors live under `visual.`; linear weights are stored
/// `[in, out]`, and the patch projection flattens each patch in
/// `(row, column, channel)` order. Tensors outside `visual.` (a text tower,
/// for instance) are carried along untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: TensorMap,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(tensors: TensorMap, meta: CheckpointMeta) -> Result<Self> {
        let ckpt = Self { tensors, meta };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint {} lacks tensor {name}", self.meta.model_id)))
    }

    /// Number of tokens (`N + 1`) the positional embedding was built for.
    pub fn token_count(&self) -> Result<usize> {
        Ok(self.get(names::POS)?.shape()[0])
    }

    /// Output feature width: the projection width if present, else `D`.
    pub fn feature_dim(&self) -> usize {
        self.tensors.get(names::PROJ).map_or(self.meta.dim, |p| p.last_dim())
    }

    /// Expected shape of every vision-tower parameter.
    fn expected_shapes(&self) -> Result<BTreeMap<String, Vec<usize>>> {
        let m = &self.meta;
        if m.dim == 0 || m.heads == 0 || !m.dim.is_multiple_of(m.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                m.dim, m.heads
            )));
        }
        if m.patch == 0 || m.mlp_ratio == 0 {
            return Err(Error::Config("patch size and mlp ratio must be positive".into()));
        }
        let d = m.dim;
        let hidden = d * m.mlp_ratio;
        let tokens = self.token_count()?;
        let mut shapes = BTreeMap::new();
        shapes.insert(names::PATCH_WEIGHT.to_string(), vec![3 * m.patch * m.patch, d]);
        shapes.insert(names::PATCH_BIAS.to_string(), vec![d]);
        shapes.insert(names::CLS.to_string(), vec![d]);
        shapes.insert(names::POS.to_string(), vec![tokens, d]);
        for n in [names::LN_PRE_W, names::LN_PRE_B, names::LN_POST_W, names::LN_POST_B] {
            shapes.insert(n.to_string(), vec![d]);
        }
        for l in 0..m.layers {
            let block_shapes: [Vec<usize>; 12] = [
                vec![d],
                vec![d],
                vec![d, 3 * d],
                vec![3 * d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, hidden],
                vec![hidden],
                vec![hidden, d],
                vec![d],
            ];
            for (p, s) in names::BLOCK_PARAMS.iter().zip(block_shapes) {
                shapes.insert(names::block(l, p), s);
            }
        }
        if let Some(proj) = self.tensors.get(names::PROJ) {
            shapes.insert(names::PROJ.to_string(), vec![d, proj.last_dim()]);
        }
        Ok(shapes)
    }

    /// Check the vision tower against the metadata: every parameter present
    /// with the right shape and no unexpected `visual.` tensors.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.expected_shapes()?;
        for (name, shape) in &shapes {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| k.starts_with("visual.") && !shapes.contains_key(*k))
        {
            return Err(Error::Config(format!("unexpected vision tensor {extra}")));
        }
        let tokens = self.token_count()?;
        let grid = (tokens - 1).isqrt();
        if tokens < 2 || grid * grid != tokens - 1 {
            return Err(Error::Config(format!(
                "positional embedding has {tokens} rows, not 1 + a square patch grid"
            )));
        }
        Ok(())
    }

    /// Side length in pixels of the square input the checkpoint accepts.
    pub fn image_size(&self) -> Result<usize> {
        Ok((self.token_count()? - 1).isqrt() * self.meta.patch)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        container::write(&mut out, &self.tensors, &serde_json::to_value(&self.meta)?)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tensors, meta) = container::read(bytes)?;
        Self::new(tensors, serde_json::from_value(meta)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::save(path, &self.tensors, &serde_json::to_value(&self.meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = container::load(path)?;
        let meta = serde_json::from_value(meta).map_err(|e| Error::from(e).in_file(path))?;
        Self::new(tensors, meta).map_err(|e| e.in_file(path))
    }
}

/// Shape parameters for a seeded synthetic checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub model_id: String,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
    /// Patches per side of the square input.
    pub grid: usize,
    pub proj_dim: Option<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(dim: usize, layers: usize, heads: usize, patch: usize, grid: usize, seed: u64) -> Self {
        Self {
            model_id: format!("synthetic-{seed}"),
            dim,
            layers,
            heads,
            patch,
            mlp_ratio: 2,
            grid,
            proj_dim: None,
            activation: Activation::Gelu,
            seed,
        }
    }
}

impl Checkpoint {
    /// Deterministic pseudo-random weights: every tensor is drawn from one
    /// SplitMix64 stream in name order. Linear weights are uniform in
    /// `±1/√fan_in`; norm gains sit near 1.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let meta = CheckpointMeta {
            model_id: spec.model_id.clone(),
            dim: spec.dim,
            layers: spec.layers,
            patch: spec.patch,
            heads: spec.heads,
            mlp_ratio: spec.mlp_ratio,
            activation: spec.activation,
            image_mean: [0.5; 3],
            image_std: [0.25; 3],
            seed: Some(spec.seed),
            merge: None,
            extra: Map::new(),
        };
        let tokens = spec.grid * spec.grid + 1;
        let mut shell = Checkpoint {
            tensors: TensorMap::new(),
            meta,
        };
        shell
            .tensors
            .insert(names::POS.to_string(), Tensor::zeros(vec![tokens, spec.dim])?);
        if let Some(p) = spec.proj_dim {
            shell
                .tensors
                .insert(names::PROJ.to_string(), Tensor::zeros(vec![spec.dim, p])?);
        }
        let shapes = shell.expected_shapes()?;
        let mut rng = SplitMix64::new(spec.seed);
        let mut tensors = TensorMap::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with("ln_1.weight")
                || name.ends_with("ln_2.weight")
                || name.contains("ln_pre.weight")
                || name.contains("ln_post.weight")
            {
                (0..n).map(|_| 1.0 + rng.symmetric_f32(0.1)).collect()
            } else if shape.len() == 2 && name != names::POS {
                let scale = 1.0 / (shape[0] as f32).sqrt();
                (0..n).map(|_| rng.symmetric_f32(scale)).collect()
            } else if name == names::POS || name == names::CLS {
                (0..n).map(|_| rng.symmetric_f32(0.5)).collect()
            } else {
                (0..n).map(|_| rng.symmetric_f32(0.1)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Checkpoint::new(tensors, shell.meta)
    }
}
