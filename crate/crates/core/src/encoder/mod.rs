//! Pre-norm ViT vision encoder with region-constrained attention in its
//! final layers.
//!
//! The first `L − |Θ|` blocks run standard self-attention. Block
//! `L − |Θ| + r` restricts every query to the keys its hierarchy mask `r`
//! allows; disallowed keys receive exactly zero attention weight.

mod checkpoint;

pub use checkpoint::{
    names, Activation, Checkpoint, CheckpointMeta, MergeProvenance, SyntheticSpec, CLIP_MEAN, CLIP_STD,
};

use crate::error::{Error, Result};
use crate::numerics::{self, layer_norm, linear, masked_softmax_row, Tensor, LAYER_NORM_EPS};
use crate::regions::{AttentionMask, MaskHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub masked_layers: usize,
    pub dim: usize,
    pub patch: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl EncoderConfig {
    pub fn from_meta(meta: &CheckpointMeta, masked_layers: usize) -> Result<Self> {
        let cfg = Self {
            layers: meta.layers,
            masked_layers,
            dim: meta.dim,
            patch: meta.patch,
            heads: meta.heads,
            mlp_ratio: meta.mlp_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.masked_layers > self.layers {
            return Err(Error::Config(format!(
                "{} masked layers requested but the encoder has {}",
                self.masked_layers, self.layers
            )));
        }
        Ok(())
    }

    /// Number of leading blocks that run unmasked (`L_u`).
    pub fn unmasked_layers(&self) -> usize {
        self.layers - self.masked_layers
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Encoder output: one row per token, row 0 is CLS.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub tokens: Tensor,
}

impl FeatureSet {
    /// Patch-token rows (CLS excluded).
    pub fn patches(&self) -> impl Iterator<Item = &[f32]> {
        self.tokens.rows().skip(1)
    }

    pub fn patch_count(&self) -> usize {
        self.tokens.shape()[0] - 1
    }

    pub fn dim(&self) -> usize {
        self.tokens.last_dim()
    }
}

struct BlockParams<'a> {
    ln1: (&'a Tensor, &'a Tensor),
    qkv: (&'a Tensor, &'a Tensor),
    out: (&'a Tensor, &'a Tensor),
    ln2: (&'a Tensor, &'a Tensor),
    fc1: (&'a Tensor, &'a Tensor),
    fc2: (&'a Tensor, &'a Tensor),
}

/// Borrowed, validated view of a checkpoint ready for inference.
pub struct Encoder<'a> {
    cfg: EncoderConfig,
    ckpt: &'a Checkpoint,
    blocks: Vec<BlockParams<'a>>,
}

impl<'a> Encoder<'a> {
    pub fn new(ckpt: &'a Checkpoint, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let m = &ckpt.meta;
        if (cfg.layers, cfg.dim, cfg.patch, cfg.heads, cfg.mlp_ratio)
            != (m.layers, m.dim, m.patch, m.heads, m.mlp_ratio)
        {
            return Err(Error::Config(format!(
                "encoder config {cfg:?} does not match checkpoint {}",
                m.model_id
            )));
        }
        ckpt.validate()?;
        let pair = |layer: usize, w: &str, b: &str| -> Result<(&'a Tensor, &'a Tensor)> {
            Ok((ckpt.get(&names::block(layer, w))?, ckpt.get(&names::block(layer, b))?))
        };
        let blocks = (0..cfg.layers)
            .map(|l| {
                Ok(BlockParams {
                    ln1: pair(l, "ln_1.weight", "ln_1.bias")?,
                    qkv: pair(l, "attn.qkv.weight", "attn.qkv.bias")?,
                    out: pair(l, "attn.out.weight", "attn.out.bias")?,
                    ln2: pair(l, "ln_2.weight", "ln_2.bias")?,
                    fc1: pair(l, "mlp.fc1.weight", "mlp.fc1.bias")?,
                    fc2: pair(l, "mlp.fc2.weight", "mlp.fc2.bias")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, ckpt, blocks })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        self.ckpt
    }

    /// `[CLS, z_1 … z_N] + pos`, patches in raster order.
    pub fn patch_embed(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = match image.shape()[..] {
            [h, w, 3] => (h, w),
            _ => return Err(Error::dim(format!("expected H×W×3 image, got {:?}", image.shape()))),
        };
        let p = self.cfg.patch;
        if h % p != 0 || w % p != 0 {
            return Err(Error::dim(format!(
                "{h}x{w} image is not divisible into {p}-pixel patches"
            )));
        }
        let (rows, cols) = (h / p, w / p);
        let n = rows * cols;
        let pos = self.ckpt.get(names::POS)?;
        if pos.shape()[0] != n + 1 {
            return Err(Error::dim(format!(
                "image has {n} patches but the positional embedding covers {}",
                pos.shape()[0] - 1
            )));
        }
        let mut flat = Vec::with_capacity(n * 3 * p * p);
        for pr in 0..rows {
            for pc in 0..cols {
                for y in pr * p..(pr + 1) * p {
                    let start = (y * w + pc * p) * 3;
                    flat.extend_from_slice(&image.data()[start..start + 3 * p]);
                }
            }
        }
        let patches = Tensor::new(vec![n, 3 * p * p], flat)?;
        let z = linear(
            &patches,
            self.ckpt.get(names::PATCH_WEIGHT)?,
            self.ckpt.get(names::PATCH_BIAS)?,
        )?;
        let mut tokens = self.ckpt.get(names::CLS)?.data().to_vec();
        tokens.extend_from_slice(z.data());
        for (t, e) in tokens.iter_mut().zip(pos.data()) {
            *t += e;
        }
        Tensor::new(vec![n + 1, self.cfg.dim], tokens)
    }

    /// Multi-head self-attention sub-block including its residual.
    /// Returns the head-averaged attention matrix when `trace` is set.
    fn attention(
        &self,
        x: &Tensor,
        block: &BlockParams<'_>,
        mask: Option<&AttentionMask>,
        trace: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let t = x.shape()[0];
        if let Some(m) = mask {
            if m.size() != t {
                return Err(Error::dim(format!("{}-token mask for {t} tokens", m.size())));
            }
        }
        let d = self.cfg.dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let normed = layer_norm(x, block.ln1.0, block.ln1.1, LAYER_NORM_EPS)?;
        let qkv = linear(&normed, block.qkv.0, block.qkv.1)?;
        let qkv = qkv.data();
        let mut heads_out = vec![0.0f32; t * d];
        let mut avg = trace.then(|| vec![0.0f32; t * t]);
        let mut probs = vec![0.0f32; t];
        for h in 0..self.cfg.heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for a in 0..t {
                let q = &qkv[a * 3 * d + qo..][..dh];
                let allowed = mask.map(|m| m.row(a));
                for (b, logit) in probs.iter_mut().enumerate() {
                    *logit = match allowed {
                        Some(row) if !row[b] => 0.0,
                        _ => numerics::dot(q, &qkv[b * 3 * d + ko..][..dh]) * scale,
                    };
                }
                if !masked_softmax_row(&mut probs, allowed) {
                    return Err(Error::DegenerateRow { row: a });
                }
                let out = &mut heads_out[a * d + h * dh..][..dh];
                for (b, &pb) in probs.iter().enumerate() {
                    if allowed.is_some_and(|row| !row[b]) {
                        continue;
                    }
                    let v = &qkv[b * 3 * d + vo..][..dh];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += pb * vv;
                    }
                }
                if let Some(avg) = avg.as_mut() {
                    for (acc, &pb) in avg[a * t..(a + 1) * t].iter_mut().zip(&probs) {
                        *acc += pb;
                    }
                }
            }
        }
        let attn = Tensor::new(vec![t, d], heads_out)?;
        let projected = linear(&attn, block.out.0, block.out.1)?;
        let mut y = x.clone();
        for (v, a) in y.data_mut().iter_mut().zip(projected.data()) {
            *v += a;
        }
        let avg = match avg {
            Some(mut avg) => {
                let inv = 1.0 / self.cfg.heads as f32;
                avg.iter_mut().for_each(|v| *v *= inv);
                Some(Tensor::new(vec![t, t], avg)?)
            }
            None => None,
        };
        Ok((y, avg))
    }

    fn mlp(&self, x: Tensor, block: &BlockParams<'_>) -> Result<Tensor> {
        let normed = layer_norm(&x, block.ln2.0, block.ln2.1, LAYER_NORM_EPS)?;
        let mut hidden = linear(&normed, block.fc1.0, block.fc1.1)?;
        let act = self.ckpt.meta.activation;
        hidden.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        let out = linear(&hidden, block.fc2.0, block.fc2.1)?;
        let mut y = x;
        for (v, o) in y.data_mut().iter_mut().zip(out.data()) {
            *v += o;
        }
        Ok(y)
    }

    /// One transformer block with an optional attention mask.
    pub fn block(&self, layer: usize, x: &Tensor, mask: Option<&AttentionMask>) -> Result<Tensor> {
        let (y, _) = self.attention(x, &self.blocks[layer], mask, false)?;
        self.mlp(y, &self.blocks[layer])
    }

    /// Block forward that also returns its head-averaged attention weights.
    pub fn block_traced(&self, layer: usize, x: &Tensor, mask: Option<&AttentionMask>) -> Result<(Tensor, Tensor)> {
        let (y, attn) = self.attention(x, &self.blocks[layer], mask, true)?;
        Ok((self.mlp(y, &self.blocks[layer])?, attn.expect("traced attention")))
    }

    fn check_hierarchy(&self, hierarchy: Option<&MaskHierarchy>) -> Result<()> {
        let levels = hierarchy.map_or(0, MaskHierarchy::len);
        if levels != self.cfg.masked_layers {
            return Err(Error::Config(format!(
                "{} masked layers configured but the hierarchy has {levels} levels",
                self.cfg.masked_layers
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        image: &Tensor,
        hierarchy: Option<&MaskHierarchy>,
        mut on_attention: Option<&mut dyn FnMut(usize, Tensor)>,
    ) -> Result<FeatureSet> {
        self.check_hierarchy(hierarchy)?;
        let z = self.patch_embed(image)?;
        let mut x = layer_norm(
            &z,
            self.ckpt.get(names::LN_PRE_W)?,
            self.ckpt.get(names::LN_PRE_B)?,
            LAYER_NORM_EPS,
        )?;
        let first_masked = self.cfg.unmasked_layers();
        for layer in 0..self.cfg.layers {
            let mask = layer
                .checked_sub(first_masked)
                .and_then(|r| hierarchy.map(|h| &h.masks()[r]));
            x = match on_attention.as_mut() {
                Some(cb) => {
                    let (y, attn) = self.block_traced(layer, &x, mask)?;
                    cb(layer, attn);
                    y
                }
                None => self.block(layer, &x, mask)?,
            };
        }
        let mut f = layer_norm(
            &x,
            self.ckpt.get(names::LN_POST_W)?,
            self.ckpt.get(names::LN_POST_B)?,
            LAYER_NORM_EPS,
        )?;
        if let Some(proj) = self.ckpt.tensors.get(names::PROJ) {
            f = numerics::matmul(&f, proj)?;
        }
        Ok(FeatureSet { tokens: f })
    }

    /// Full forward pass. `hierarchy` must hold exactly `masked_layers`
    /// masks (or be `None` when that count is zero).
    pub fn encode(&self, image: &Tensor, hierarchy: Option<&MaskHierarchy>) -> Result<FeatureSet> {
        self.run(image, hierarchy, None)
    }

    /// Forward pass that also returns each layer's head-averaged attention.
    pub fn encode_traced(
        &self,
        image: &Tensor,
        hierarchy: Option<&MaskHierarchy>,
    ) -> Result<(FeatureSet, Vec<Tensor>)> {
        let mut maps = Vec::with_capacity(self.cfg.layers);
        let mut record = |_layer: usize, attn: Tensor| maps.push(attn);
        let features = self.run(image, hierarchy, Some(&mut record))?;
        Ok((features, maps))
    }
}

/// Convenience wrapper: build an encoder and run one image.
pub fn encode(
    image: &Tensor,
    ckpt: &Checkpoint,
    cfg: EncoderConfig,
    hierarchy: Option<&MaskHierarchy>,
) -> Result<FeatureSet> {
    Encoder::new(ckpt, cfg)?.encode(image, hierarchy)
}
