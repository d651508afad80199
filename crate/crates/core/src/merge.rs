//! Prompt-variant separation margins and margin-weighted checkpoint merging.
//!
//! For each class, the margin is the mean pairwise similarity among the
//! class's own variant embeddings minus the mean similarity to every other
//! class's variants. A model's score is the class-mean margin; merge weights
//! are the scores normalised to sum to one.

use serde::{Deserialize, Serialize};

use crate::encoder::{Checkpoint, MergeProvenance};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Tensor;
use crate::text::TextEmbeddingSet;

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Mean cosine similarity over all unordered pairs of distinct variants.
pub fn intra_class_similarity(set: &TextEmbeddingSet) -> Result<f64> {
    let k = set.k();
    if k < 2 {
        return Err(Error::InsufficientVariants(k));
    }
    let rows: Vec<&[f32]> = set.embeddings.rows().collect();
    let mut sum = 0.0;
    for m in 0..k {
        for n in m + 1..k {
            sum += dot64(rows[m], rows[n]);
        }
    }
    Ok(2.0 * sum / (k * (k - 1)) as f64)
}

/// Mean similarity between `set`'s variants and every variant of each
/// other class.
pub fn inter_class_similarity(set: &TextEmbeddingSet, others: &[&TextEmbeddingSet]) -> Result<f64> {
    if others.is_empty() {
        return Err(Error::InsufficientClasses(1));
    }
    let k = set.k();
    for o in others {
        if o.embeddings.shape() != set.embeddings.shape() {
            return Err(Error::dim(format!(
                "class {} has embeddings {:?}, class {} has {:?}",
                o.class,
                o.embeddings.shape(),
                set.class,
                set.embeddings.shape()
            )));
        }
    }
    let mut sum = 0.0;
    for o in others {
        for a in set.embeddings.rows() {
            for b in o.embeddings.rows() {
                sum += dot64(a, b);
            }
        }
    }
    Ok(sum / ((k * k) as f64 * others.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMargin {
    pub class: usize,
    pub intra: f64,
    pub inter: f64,
    /// `intra − inter`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMargins {
    pub model: String,
    pub classes: Vec<ClassMargin>,
    pub pvsm: f64,
}

/// Per-class margins and their mean for one model's class embeddings.
pub fn pvsm(sets: &[TextEmbeddingSet]) -> Result<ModelMargins> {
    if sets.len() < 2 {
        return Err(Error::InsufficientClasses(sets.len()));
    }
    let classes = sets
        .iter()
        .enumerate()
        .map(|(c, set)| {
            let intra = intra_class_similarity(set)?;
            let others: Vec<&TextEmbeddingSet> = sets
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != c)
                .map(|(_, s)| s)
                .collect();
            let inter = inter_class_similarity(set, &others)?;
            Ok(ClassMargin {
                class: set.class,
                intra,
                inter,
                margin: intra - inter,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pvsm = classes.iter().map(|c| c.margin).sum::<f64>() / classes.len() as f64;
    Ok(ModelMargins {
        model: sets[0].model.clone(),
        classes,
        pvsm,
    })
}

/// `w_o = s_o / Σ s`. Every score must be strictly positive.
pub fn merge_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Weight("no models to weight".into()));
    }
    if let Some((index, &score)) = scores.iter().enumerate().find(|(_, &s)| !(s > 0.0 && s.is_finite())) {
        return Err(Error::NonPositiveMargin { index, score });
    }
    let n = scores.len();
    if scores.iter().all(|&s| s == scores[0]) {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let total: f64 = scores.iter().sum();
    Ok(scores.iter().map(|s| s / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    #[serde(flatten)]
    pub margins: ModelMargins,
    pub weight: Option<f64>,
}

/// Margins for every model and the resulting merge weights. Weights are
/// absent when some model's score is not positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvsmReport {
    pub models: Vec<ModelReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub non_positive: Vec<String>,
}

impl PvsmReport {
    pub fn new(models: Vec<ModelMargins>) -> Self {
        let scores: Vec<f64> = models.iter().map(|m| m.pvsm).collect();
        let weights = merge_weights(&scores).ok();
        let non_positive = models
            .iter()
            .filter(|m| m.pvsm <= 0.0 || m.pvsm.is_nan())
            .map(|m| m.model.clone())
            .collect();
        let models = models
            .into_iter()
            .enumerate()
            .map(|(i, margins)| ModelReport {
                weight: weights.as_ref().map(|w| w[i]),
                margins,
            })
            .collect();
        Self { models, non_positive }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.margins.pvsm).collect()
    }

    /// Merge weights in model order, or the non-positive-margin error.
    pub fn weights(&self) -> Result<Vec<f64>> {
        merge_weights(&self.scores())
    }
}

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// `φ_f = Σ w_o φ_o` over every tensor. Inputs must share tensor names,
/// shapes and architecture metadata; weights must sum to one.
///
/// Terms are accumulated in model order starting from the first model with
/// a nonzero weight; zero-weight models are skipped.
pub fn merge_checkpoints(ckpts: &[Checkpoint], weights: &[f64], exec: Execution) -> Result<Checkpoint> {
    let first = ckpts
        .first()
        .ok_or_else(|| Error::IncompatibleCheckpoint("no checkpoints given".into()))?;
    if weights.len() != ckpts.len() {
        return Err(Error::Weight(format!(
            "{} weights for {} checkpoints",
            weights.len(),
            ckpts.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Weight(format!("non-finite weight {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Weight(format!("weights sum to {sum}, expected 1")));
    }
    check_compatible(ckpts)?;

    let names: Vec<&String> = first.tensors.keys().collect();
    let w32: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    let merged = exec.try_map(&names, |name| {
        let shape = first.tensors[*name].shape().to_vec();
        let mut acc: Option<Vec<f32>> = None;
        for (ckpt, &w) in ckpts.iter().zip(&w32) {
            if w == 0.0 {
                continue;
            }
            let src = ckpt.tensors[*name].data();
            match acc.as_mut() {
                None => acc = Some(src.iter().map(|&x| w * x).collect()),
                Some(a) => a.iter_mut().zip(src).for_each(|(a, &x)| *a += w * x),
            }
        }
        let data = acc.unwrap_or_else(|| vec![0.0; first.tensors[*name].len()]);
        Ok(((*name).clone(), Tensor::new(shape, data)?))
    })?;

    let mut meta = first.meta.clone();
    let sources: Vec<String> = ckpts.iter().map(|c| c.meta.model_id.clone()).collect();
    meta.model_id = format!("merged({})", sources.join("+"));
    meta.seed = None;
    meta.merge = Some(MergeProvenance {
        sources,
        weights: weights.to_vec(),
        pvsm: None,
    });
    Checkpoint::new(merged.into_iter().collect(), meta)
}

fn check_compatible(ckpts: &[Checkpoint]) -> Result<()> {
    let first = &ckpts[0];
    let arch = |c: &Checkpoint| {
        let m = &c.meta;
        (m.dim, m.layers, m.patch, m.heads, m.mlp_ratio, m.activation)
    };
    for (i, c) in ckpts.iter().enumerate().skip(1) {
        for (name, t) in &first.tensors {
            match c.tensors.get(name) {
                None => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {name} missing from checkpoint {i} ({})",
                        c.meta.model_id
                    )))
                }
                Some(u) if u.shape() != t.shape() => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {name} has shape {:?} in checkpoint {i} ({}) but {:?} in checkpoint 0",
                        u.shape(),
                        c.meta.model_id,
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = c.tensors.keys().find(|k| !first.tensors.contains_key(*k)) {
            return Err(Error::IncompatibleCheckpoint(format!(
                "tensor {extra} only present in checkpoint {i} ({})",
                c.meta.model_id
            )));
        }
        if arch(c) != arch(first) {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint {i} ({}) has a different architecture from {}",
                c.meta.model_id, first.meta.model_id
            )));
        }
    }
    Ok(())
}
