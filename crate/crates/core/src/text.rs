//! Prompt-variant generation and text-embedding sources.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, TensorMap};
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, Tensor};
use crate::rng::{derive_seed, SplitMix64};

/// Prompt grammar: a variant is `prefix + " of " + synonym + " " + suffix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGrammar {
    /// One base prompt per class, used for segmentation.
    pub base_prompts: Vec<String>,
    /// Per-class synonyms.
    pub synonyms: Vec<Vec<String>>,
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    /// Variants drawn per class.
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
}

impl PromptGrammar {
    pub fn classes(&self) -> usize {
        self.base_prompts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_prompts.is_empty() {
            return Err(Error::Grammar("no classes".into()));
        }
        if self.synonyms.len() != self.base_prompts.len() {
            return Err(Error::Grammar(format!(
                "{} base prompts but {} synonym lists",
                self.base_prompts.len(),
                self.synonyms.len()
            )));
        }
        if let Some(c) = self.synonyms.iter().position(Vec::is_empty) {
            return Err(Error::Grammar(format!("class {c} has no synonyms")));
        }
        if self.prefixes.is_empty() || self.suffixes.is_empty() {
            return Err(Error::Grammar("prefix and suffix lists must be non-empty".into()));
        }
        if self.k == 0 {
            return Err(Error::Grammar("K must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let g: Self = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))?;
        g.validate().map_err(|e| e.in_file(path))?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptVariantSet {
    pub class: usize,
    pub variants: Vec<String>,
}

/// Draw `K` variants for class `c`. Each variant takes an independent
/// uniform prefix, synonym and suffix (in that order) from a SplitMix64
/// stream seeded by `(grammar.seed, c)`.
pub fn generate_variants(grammar: &PromptGrammar, c: usize) -> Result<PromptVariantSet> {
    let synonyms = grammar
        .synonyms
        .get(c)
        .ok_or_else(|| Error::Grammar(format!("class {c} out of range")))?;
    if synonyms.is_empty() {
        return Err(Error::Grammar(format!("class {c} has no synonyms")));
    }
    if grammar.prefixes.is_empty() || grammar.suffixes.is_empty() {
        return Err(Error::Grammar("prefix and suffix lists must be non-empty".into()));
    }
    let mut rng = SplitMix64::new(derive_seed(grammar.seed, c as u64));
    let variants = (0..grammar.k)
        .map(|_| {
            let prefix = &grammar.prefixes[rng.below(grammar.prefixes.len())];
            let synonym = &synonyms[rng.below(synonyms.len())];
            let suffix = &grammar.suffixes[rng.below(grammar.suffixes.len())];
            format!("{prefix} of {synonym} {suffix}")
        })
        .collect();
    Ok(PromptVariantSet { class: c, variants })
}

/// Maps a string to a fixed-width embedding.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Deterministic stand-in for a text tower: signed feature hashing of the
/// character 1-, 2- and 3-grams of ` text `.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl ToyEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    SplitMix64::new(h).next_u64()
}

impl TextEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("toy-{}", self.seed)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim];
        if text.is_empty() || self.dim == 0 {
            return Ok(v);
        }
        let padded = format!(" {text} ");
        let bytes = padded.as_bytes();
        for n in 1..=3 {
            for gram in bytes.windows(n) {
                let h = fnv1a(self.seed, gram);
                let idx = ((h as u128 * self.dim as u128) >> 64) as usize;
                let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
                v[idx] += sign;
            }
        }
        Ok(v)
    }
}

/// Unit-norm embeddings of one class's variants for one model (`K×D`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    pub class: usize,
    pub model: String,
    pub embeddings: Tensor,
}

impl TextEmbeddingSet {
    /// Normalise each row of `raw`.
    pub fn from_raw(class: usize, model: impl Into<String>, raw: Tensor) -> Result<Self> {
        let model = model.into();
        let (k, d) = raw.dims2()?;
        let mut data = raw.into_data();
        for (z, row) in data.chunks_exact_mut(d).enumerate() {
            normalize(row).map_err(|_| Error::Normalization(format!("model {model}, class {class}, row {z}")))?;
        }
        Ok(Self {
            class,
            model,
            embeddings: Tensor::new(vec![k, d], data)?,
        })
    }

    pub fn k(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.last_dim()
    }
}

fn normalize(v: &mut [f32]) -> Result<()> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Normalization(String::new()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Encode and L2-normalise every variant, keeping variant order.
pub fn encode_prompts(variants: &PromptVariantSet, enc: &dyn TextEncoder) -> Result<TextEmbeddingSet> {
    let d = enc.dim();
    let mut data = Vec::with_capacity(variants.variants.len() * d);
    for v in &variants.variants {
        let mut e = enc.embed(v)?;
        if e.len() != d {
            return Err(Error::dim(format!("encoder returned {} values, expected {d}", e.len())));
        }
        normalize(&mut e).map_err(|_| Error::Normalization(v.clone()))?;
        data.extend(e);
    }
    Ok(TextEmbeddingSet {
        class: variants.class,
        model: enc.id(),
        embeddings: Tensor::new(vec![variants.variants.len(), d], data)?,
    })
}

/// Variant embeddings for every class of a grammar.
pub fn grammar_embeddings(grammar: &PromptGrammar, enc: &dyn TextEncoder) -> Result<Vec<TextEmbeddingSet>> {
    grammar.validate()?;
    (0..grammar.classes())
        .map(|c| encode_prompts(&generate_variants(grammar, c)?, enc))
        .collect()
}

/// Unit-norm base-prompt embeddings, one row per class (`C×D`).
pub fn class_embeddings(prompts: &[String], enc: &dyn TextEncoder) -> Result<Tensor> {
    let set = encode_prompts(
        &PromptVariantSet {
            class: 0,
            variants: prompts.to_vec(),
        },
        enc,
    )?;
    Ok(set.embeddings)
}

/// Embeddings computed elsewhere (e.g. by a real text tower), stored in a
/// `.ckpt1` container with one `K×D` tensor per `text/<model>/<class>`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEmbeddings {
    models: BTreeMap<String, Vec<TextEmbeddingSet>>,
}

impl PrecomputedEmbeddings {
    pub fn from_tensors(tensors: TensorMap) -> Result<Self> {
        let mut raw: BTreeMap<String, BTreeMap<usize, Tensor>> = BTreeMap::new();
        for (name, t) in tensors {
            let bad = || Error::Format {
                kind: "embedding container",
                msg: format!("unexpected tensor name {name:?}"),
            };
            let rest = name.strip_prefix("text/").ok_or_else(bad)?;
            let (model, class) = rest.rsplit_once('/').ok_or_else(bad)?;
            let class: usize = class.parse().map_err(|_| bad())?;
            raw.entry(model.to_string()).or_default().insert(class, t);
        }
        let mut models = BTreeMap::new();
        for (model, classes) in raw {
            let mut sets = Vec::with_capacity(classes.len());
            for (expected, (class, t)) in classes.into_iter().enumerate() {
                if class != expected {
                    return Err(Error::Format {
                        kind: "embedding container",
                        msg: format!("model {model} lacks class {expected}"),
                    });
                }
                sets.push(TextEmbeddingSet::from_raw(class, model.clone(), t)?);
            }
            let shape = sets[0].embeddings.shape().to_vec();
            if let Some(s) = sets.iter().find(|s| s.embeddings.shape() != shape.as_slice()) {
                return Err(Error::dim(format!(
                    "model {model}: class {} has shape {:?}, class 0 has {shape:?}",
                    s.class,
                    s.embeddings.shape()
                )));
            }
            models.insert(model, sets);
        }
        Ok(Self { models })
    }

    pub fn from_sets(sets: Vec<TextEmbeddingSet>) -> Result<Self> {
        let mut tensors = TensorMap::new();
        for s in sets {
            tensors.insert(format!("text/{}/{}", s.model, s.class), s.embeddings);
        }
        Self::from_tensors(tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, _) = container::load(path)?;
        Self::from_tensors(tensors).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = TensorMap::new();
        for (model, sets) in &self.models {
            for s in sets {
                tensors.insert(format!("text/{model}/{}", s.class), s.embeddings.clone());
            }
        }
        container::save(path, &tensors, &serde_json::json!({"kind": "text-embeddings"}))
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn class_sets(&self, model: &str) -> Result<&[TextEmbeddingSet]> {
        self.models
            .get(model)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no embeddings for model {model:?}")))
    }

    /// Per-class segmentation embedding: the normalised mean of the class's
    /// variant rows (`C×D`).
    pub fn class_embeddings(&self, model: &str) -> Result<Tensor> {
        let sets = self.class_sets(model)?;
        let d = sets[0].dim();
        let mut rows = Vec::with_capacity(sets.len());
        for s in sets {
            let mut mean = vec![0.0f32; d];
            for row in s.embeddings.rows() {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            normalize(&mut mean).map_err(|_| Error::Normalization(format!("mean of class {}", s.class)))?;
            rows.push(mean);
        }
        Tensor::from_rows(&rows)
    }
}
