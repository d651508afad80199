//! Acceptance gate: one line per criterion, non-zero exit if any fails.
//!
//! Oracles here are written independently of the library internals; they
//! only share the on-disk/tensor layout contracts.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use reseg::encoder::{Activation, Checkpoint, Encoder, EncoderConfig, SyntheticSpec};
use reseg::exec::with_threads;
use reseg::merge::{merge_checkpoints, merge_weights, pvsm};
use reseg::numerics::{masked_softmax, Tensor};
use reseg::regions::{build_attention_mask, MaskHierarchy, RegionIndexGrid, RegionLabelImage};
use reseg::rng::SplitMix64;
use reseg::segment::{
    crop_image, similarity_map, tile_offsets, NoMasks, RasterMasks, ScoreAveraging, Segmenter, SlidingWindowConfig,
    Window,
};
use reseg::text::{class_embeddings, TextEmbeddingSet, ToyEncoder};
use reseg::Execution;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(budget: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took <= budget, "took {took:?}, budget {budget:?}");
    Ok(took)
}

// ---------------------------------------------------------------- 1

fn oracle_softmax(logits: &[f32], allowed: &[bool]) -> Vec<f64> {
    let kept: Vec<f64> = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l as f64)
        .collect();
    let max = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = kept.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut out = vec![0.0; logits.len()];
    let mut it = exps.iter();
    for (o, &a) in out.iter_mut().zip(allowed) {
        if a {
            *o = it.next().unwrap() / total;
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = 1 + rng.below(32);
        let cols = 1 + rng.below(32);
        let logits: Vec<f32> = (0..rows * cols).map(|_| rng.symmetric_f32(10.0)).collect();
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.below(3) > 0).collect();
        for r in 0..rows {
            // keep every row live
            mask[r * cols + rng.below(cols)] = true;
        }
        let t = Tensor::new(vec![rows, cols], logits.clone()).map_err(err)?;
        let out = masked_softmax(&t, &mask).map_err(err)?;
        for r in 0..rows {
            let row = r * cols..(r + 1) * cols;
            let want = oracle_softmax(&logits[row.clone()], &mask[row.clone()]);
            for ((&got, w), &a) in out.data()[row.clone()].iter().zip(&want).zip(&mask[row]) {
                if !a {
                    ensure!(got.to_bits() == 0, "masked entry is {got}, not +0");
                }
                worst = worst.max((got as f64 - w).abs());
            }
        }
    }
    ensure!(worst < 1e-6, "max abs diff {worst:e}");
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("1000 cases, max abs diff {worst:.2e}, {took:.2?}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(2);
    for case in 0..50 {
        let heads = 1 + rng.below(2);
        let dim = heads * (2 + 2 * rng.below(3));
        let layers = 1 + rng.below(4);
        let grid = 1 + rng.below(3); // N = grid² ≤ 9 ≤ 16
        let patch = 1 + rng.below(3);
        let mut spec = SyntheticSpec::new(dim, layers, heads, patch, grid, 100 + case);
        if rng.below(2) == 1 {
            spec.activation = Activation::QuickGelu;
        }
        if rng.below(2) == 1 {
            spec.proj_dim = Some(1 + rng.below(8));
        }
        let ckpt = Checkpoint::synthetic(&spec).map_err(err)?;
        let side = grid * patch;
        let image: Vec<f32> = (0..side * side * 3).map(|_| rng.symmetric_f32(2.0)).collect();
        let image = Tensor::new(vec![side, side, 3], image).map_err(err)?;
        let theta = rng.below(layers + 1);

        let plain = Encoder::new(&ckpt, EncoderConfig::from_meta(&ckpt.meta, 0).map_err(err)?).map_err(err)?;
        let masked = Encoder::new(&ckpt, EncoderConfig::from_meta(&ckpt.meta, theta).map_err(err)?).map_err(err)?;
        let a = plain.encode(&image, None).map_err(err)?;
        let neutral = MaskHierarchy::neutral(theta, grid * grid + 1);
        let b = masked.encode(&image, (theta > 0).then_some(&neutral)).map_err(err)?;
        let same = a
            .tokens
            .data()
            .iter()
            .zip(b.tokens.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(
            same && a.tokens.shape() == b.tokens.shape(),
            "case {case}: outputs differ"
        );
    }
    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("50 configs bit-identical, {took:.2?}"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(3);
    for case in 0..200 {
        let rows = 1 + rng.below(7);
        let cols = 1 + rng.below(7);
        let k = 1 + rng.below(6) as u32;
        let index: Vec<u32> = (0..rows * cols).map(|_| rng.below(k as usize) as u32).collect();
        let grid = RegionIndexGrid::new(rows, cols, index.clone()).map_err(err)?;
        let m = build_attention_mask(&grid);
        let n = rows * cols;
        ensure!(m.size() == n + 1, "case {case}: mask size");
        ensure!(m.get(0, 0), "case {case}: CLS must see itself");
        for j in 1..=n {
            ensure!(!m.get(0, j) && !m.get(j, 0), "case {case}: CLS not isolated at {j}");
        }
        for a in 0..=n {
            for b in 0..=n {
                ensure!(m.get(a, b) == m.get(b, a), "case {case}: asymmetric at ({a},{b})");
            }
        }
        for a in 1..=n {
            ensure!(m.get(a, a), "case {case}: patch {a} cannot see itself");
            for b in 1..=n {
                ensure!(
                    m.get(a, b) == (index[a - 1] == index[b - 1]),
                    "case {case}: ({a},{b}) disagrees with region equality"
                );
                if !m.get(a, b) {
                    continue;
                }
                for c in 1..=n {
                    ensure!(
                        !m.get(b, c) || m.get(a, c),
                        "case {case}: not transitive at ({a},{b},{c})"
                    );
                }
            }
        }
        // injective relabelling: shuffled, shifted label values
        let mut perm: Vec<u32> = (0..k).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let relabelled: Vec<u32> = index.iter().map(|&l| perm[l as usize] * 7 + 1000).collect();
        let m2 = build_attention_mask(&RegionIndexGrid::new(rows, cols, relabelled).map_err(err)?);
        ensure!(m2 == m, "case {case}: relabelling changed the mask");
    }
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("200 grids, {took:.2?}"))
}

// ---------------------------------------------------------------- 4

fn set(class: usize, rows: Vec<Vec<f32>>) -> Result<TextEmbeddingSet, String> {
    TextEmbeddingSet::from_raw(class, "m", Tensor::from_rows(&rows).map_err(err)?).map_err(err)
}

fn criterion_4() -> Outcome {
    let (classes, k, d) = (4, 3, 6);
    let basis = |c: usize| (0..d).map(|i| if i == c { 1.0 } else { 0.0 }).collect::<Vec<f32>>();
    let ortho: Vec<TextEmbeddingSet> = (0..classes)
        .map(|c| set(c, vec![basis(c); k]))
        .collect::<Result<_, _>>()?;
    let p = pvsm(&ortho).map_err(err)?.pvsm;
    ensure!((p - 1.0).abs() < 1e-6, "orthonormal PVSM {p}");

    let v = vec![0.3f32, -0.2, 0.9, 0.1, 0.0, 0.4];
    let same: Vec<TextEmbeddingSet> = (0..classes)
        .map(|c| set(c, vec![v.clone(); k]))
        .collect::<Result<_, _>>()?;
    let p0 = pvsm(&same).map_err(err)?.pvsm;
    ensure!(p0.abs() < 1e-6, "identical-class PVSM {p0}");

    for o in 1..=7 {
        let w = merge_weights(&vec![0.4321; o]).map_err(err)?;
        ensure!(w.iter().all(|&x| x == 1.0 / o as f64), "identical models, O={o}: {w:?}");
    }

    let mut rng = SplitMix64::new(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let o = 1 + rng.below(10);
        let s: Vec<f64> = (0..o).map(|_| 1e-3 + rng.unit_f32() as f64 * 2.0).collect();
        let w = merge_weights(&s).map_err(err)?;
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst < 1e-6, "weight sum off by {worst:e}");
    Ok(format!("PVSM {p:.6} / {p0:.1e}, weight sums within {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn toy_ckpt(seed: u64) -> Result<Checkpoint, String> {
    let mut spec = SyntheticSpec::new(8, 2, 2, 2, 2, seed);
    spec.proj_dim = Some(4);
    Checkpoint::synthetic(&spec).map_err(err)
}

fn criterion_5() -> Outcome {
    let a = toy_ckpt(51)?;
    let b = toy_ckpt(52)?;
    let m = merge_checkpoints(&[a.clone(), b.clone()], &[1.0, 0.0], Execution::Parallel).map_err(err)?;
    for (name, t) in &a.tensors {
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure!(bits(t) == bits(&m.tensors[name]), "{{1,0}} changed {name}");
    }

    let c = toy_ckpt(53)?;
    let w = [0.2, 0.5, 0.3];
    let m3 = merge_checkpoints(&[a.clone(), b.clone(), c.clone()], &w, Execution::Parallel).map_err(err)?;
    for (name, t) in &a.tensors {
        let (tb, tc) = (&b.tensors[name], &c.tensors[name]);
        for i in 0..t.len() {
            let mut acc = w[0] as f32 * t.data()[i];
            acc += w[1] as f32 * tb.data()[i];
            acc += w[2] as f32 * tc.data()[i];
            let got = m3.tensors[name].data()[i];
            ensure!(acc.to_bits() == got.to_bits(), "{name}[{i}]: {got} vs oracle {acc}");
        }
    }

    let mut rng = SplitMix64::new(5);
    let ckpts: Vec<Checkpoint> = (0..20).map(|i| toy_ckpt(500 + i)).collect::<Result<_, _>>()?;
    let raw: Vec<f64> = (0..20).map(|_| rng.unit_f32() as f64).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let fused = merge_checkpoints(&ckpts, &weights, Execution::Parallel).map_err(err)?;
    let mut violations = 0usize;
    let mut worst_ulps = 0.0f32;
    for (name, t) in &fused.tensors {
        for (i, &v) in t.data().iter().enumerate() {
            let vals = ckpts.iter().map(|c| c.tensors[name].data()[i]);
            let (lo, hi) = vals.fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
            if v < lo || v > hi {
                violations += 1;
                let over = if v < lo { lo - v } else { v - hi };
                worst_ulps = worst_ulps.max(over / (f32::EPSILON * lo.abs().max(hi.abs())));
            }
        }
    }
    ensure!(
        violations == 0,
        "{violations} elements outside [min, max] (worst {worst_ulps:.1} ulp)"
    );
    Ok("{1,0} bit-exact, 3-way exact, convex over 20 checkpoints".into())
}

// ---------------------------------------------------------------- 6

struct Reference<'a> {
    ckpt: &'a Checkpoint,
}

impl Reference<'_> {
    fn t(&self, name: &str) -> Vec<f64> {
        self.ckpt.tensors[name].data().iter().map(|&v| v as f64).collect()
    }

    fn blk(&self, l: usize, p: &str) -> Vec<f64> {
        self.t(&format!("visual.blocks.{l}.{p}"))
    }

    fn layer_norm(x: &mut [f64], g: &[f64], b: &[f64]) {
        let d = g.len();
        for row in x.chunks_exact_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            for i in 0..d {
                row[i] = (row[i] - mean) / (var + 1e-5).sqrt() * g[i] + b[i];
            }
        }
    }

    /// `x[n×i] · w[i×o] + b`
    fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, i: usize, o: usize) -> Vec<f64> {
        let n = x.len() / i;
        let mut y = vec![0.0; n * o];
        for r in 0..n {
            for c in 0..o {
                let mut s = b.map_or(0.0, |b| b[c]);
                for k in 0..i {
                    s += x[r * i + k] * w[k * o + c];
                }
                y[r * o + c] = s;
            }
        }
        y
    }

    /// Token features after the final norm/projection. `masks[r]` is the
    /// allowed-pair matrix for masked layer `r`.
    fn encode(&self, image: &[f32], side: usize, masks: &[Vec<bool>]) -> Vec<f64> {
        let m = &self.ckpt.meta;
        let (p, d, heads) = (m.patch, m.dim, m.heads);
        let g = side / p;
        let n = g * g + 1;
        let mut patches = Vec::new();
        for pr in 0..g {
            for pc in 0..g {
                for y in pr * p..pr * p + p {
                    for x in pc * p..pc * p + p {
                        for ch in 0..3 {
                            patches.push(image[(y * side + x) * 3 + ch] as f64);
                        }
                    }
                }
            }
        }
        let z = Self::affine(
            &patches,
            &self.t("visual.patch_embed.weight"),
            Some(&self.t("visual.patch_embed.bias")),
            3 * p * p,
            d,
        );
        let mut x = self.t("visual.cls_token");
        x.extend(z);
        for (v, e) in x.iter_mut().zip(self.t("visual.pos_embed")) {
            *v += e;
        }
        Self::layer_norm(&mut x, &self.t("visual.ln_pre.weight"), &self.t("visual.ln_pre.bias"));

        let dh = d / heads;
        for l in 0..m.layers {
            let mask = (l + masks.len()).checked_sub(m.layers).map(|r| &masks[r]);
            let mut h = x.clone();
            Self::layer_norm(&mut h, &self.blk(l, "ln_1.weight"), &self.blk(l, "ln_1.bias"));
            let qkv = Self::affine(
                &h,
                &self.blk(l, "attn.qkv.weight"),
                Some(&self.blk(l, "attn.qkv.bias")),
                d,
                3 * d,
            );
            let mut att = vec![0.0; n * d];
            for hd in 0..heads {
                for a in 0..n {
                    let allowed: Vec<usize> = (0..n).filter(|&b| mask.is_none_or(|mk| mk[a * n + b])).collect();
                    let logits: Vec<f64> = allowed
                        .iter()
                        .map(|&b| {
                            (0..dh)
                                .map(|i| qkv[a * 3 * d + hd * dh + i] * qkv[b * 3 * d + d + hd * dh + i])
                                .sum::<f64>()
                                / (dh as f64).sqrt()
                        })
                        .collect();
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
                    let s: f64 = e.iter().sum();
                    for (j, &b) in allowed.iter().enumerate() {
                        for i in 0..dh {
                            att[a * d + hd * dh + i] += e[j] / s * qkv[b * 3 * d + 2 * d + hd * dh + i];
                        }
                    }
                }
            }
            let o = Self::affine(
                &att,
                &self.blk(l, "attn.out.weight"),
                Some(&self.blk(l, "attn.out.bias")),
                d,
                d,
            );
            x.iter_mut().zip(o).for_each(|(v, o)| *v += o);
            let mut h = x.clone();
            Self::layer_norm(&mut h, &self.blk(l, "ln_2.weight"), &self.blk(l, "ln_2.bias"));
            let hidden = d * m.mlp_ratio;
            let mut f = Self::affine(
                &h,
                &self.blk(l, "mlp.fc1.weight"),
                Some(&self.blk(l, "mlp.fc1.bias")),
                d,
                hidden,
            );
            for v in f.iter_mut() {
                *v = match m.activation {
                    Activation::Gelu => 0.5 * *v * (1.0 + libm::erf(*v / std::f64::consts::SQRT_2)),
                    Activation::QuickGelu => *v / (1.0 + (-1.702 * *v).exp()),
                };
            }
            let o = Self::affine(
                &f,
                &self.blk(l, "mlp.fc2.weight"),
                Some(&self.blk(l, "mlp.fc2.bias")),
                hidden,
                d,
            );
            x.iter_mut().zip(o).for_each(|(v, o)| *v += o);
        }
        Self::layer_norm(&mut x, &self.t("visual.ln_post.weight"), &self.t("visual.ln_post.bias"));
        match self.ckpt.tensors.get("visual.proj") {
            Some(p) => Self::affine(&x, &self.t("visual.proj"), None, d, p.shape()[1]),
            None => x,
        }
    }
}

/// Majority region per patch (smallest label on ties), then same-region
/// pairs; CLS sees only itself.
fn reference_mask(labels: &RegionLabelImage, p: usize) -> Vec<bool> {
    let g = labels.height / p;
    let mut ri = Vec::new();
    for pr in 0..g {
        for pc in 0..g {
            let mut counts = BTreeMap::new();
            for y in pr * p..pr * p + p {
                for x in pc * p..pc * p + p {
                    *counts.entry(labels.get(y, x)).or_insert(0usize) += 1;
                }
            }
            let best = counts.values().max().copied().unwrap();
            ri.push(*counts.iter().find(|(_, &c)| c == best).unwrap().0);
        }
    }
    let n = ri.len() + 1;
    let mut m = vec![false; n * n];
    m[0] = true;
    for a in 1..n {
        for b in 1..n {
            m[a * n + b] = ri[a - 1] == ri[b - 1];
        }
    }
    m
}

fn reference_scores(features: &[f64], e: usize, text: &Tensor, g: usize, side: usize) -> (Vec<f64>, Vec<u32>) {
    let (c, _) = text.dims2().unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut low = vec![0.0; g * g * c];
    for i in 0..g * g {
        let f = &features[(i + 1) * e..(i + 2) * e];
        for k in 0..c {
            let t: Vec<f64> = text.row(k).iter().map(|&v| v as f64).collect();
            let dot: f64 = f.iter().zip(&t).map(|(a, b)| a * b).sum();
            low[i * c + k] = dot / (norm(f) * norm(&t));
        }
    }
    let src = |o: usize| ((o as f64 + 0.5) * g as f64 / side as f64 - 0.5).clamp(0.0, (g - 1) as f64);
    let mut up = vec![0.0; side * side * c];
    let mut labels = vec![0u32; side * side];
    for y in 0..side {
        let sy = src(y);
        let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(g - 1);
        for x in 0..side {
            let sx = src(x);
            let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(g - 1);
            for k in 0..c {
                let at = |yy: usize, xx: usize| low[(yy * g + xx) * c + k];
                up[(y * side + x) * c + k] = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x1) * (1.0 - fy) * fx
                    + at(y1, x0) * fy * (1.0 - fx)
                    + at(y1, x1) * fy * fx;
            }
            let px = &up[(y * side + x) * c..][..c];
            let mut best = 0;
            for k in 1..c {
                if px[k] > px[best] {
                    best = k;
                }
            }
            labels[y * side + x] = best as u32;
        }
    }
    (up, labels)
}

fn criterion_6() -> Outcome {
    let (side, p) = (8, 2);
    let prompts: Vec<String> = ["water", "forest", "rooftop"].iter().map(|s| s.to_string()).collect();
    let mut worst = 0.0f64;
    let mut rng = SplitMix64::new(6);
    for (case, theta) in [0usize, 1, 2, 3].into_iter().enumerate() {
        let mut spec = SyntheticSpec::new(12, 3, 3, p, side / p, 60 + case as u64);
        spec.proj_dim = Some(10);
        let ckpt = Checkpoint::synthetic(&spec).map_err(err)?;
        let text = class_embeddings(&prompts, &ToyEncoder::new(10, 7)).map_err(err)?;
        let image: Vec<f32> = (0..side * side * 3).map(|_| rng.symmetric_f32(2.0)).collect();
        let image_t = Tensor::new(vec![side, side, 3], image.clone()).map_err(err)?;
        let rasters: Vec<RegionLabelImage> = (0..theta)
            .map(|r| {
                let k = 2 + 3 * r;
                let labels = (0..side * side).map(|_| rng.below(k) as u32).collect();
                RegionLabelImage::new(side, side, labels, "random").unwrap()
            })
            .collect();

        let enc = Encoder::new(&ckpt, EncoderConfig::from_meta(&ckpt.meta, theta).map_err(err)?).map_err(err)?;
        let window = SlidingWindowConfig {
            tile: side,
            stride: side,
            pad: false,
            averaging: ScoreAveraging::Similarity,
        };
        let seg = Segmenter::new(enc, window, &text, Execution::Sequential).map_err(err)?;
        let got = seg
            .segment(&image_t, &RasterMasks::new(rasters.clone(), p).map_err(err)?)
            .map_err(err)?;

        let masks: Vec<Vec<bool>> = rasters.iter().map(|r| reference_mask(r, p)).collect();
        let feats = Reference { ckpt: &ckpt }.encode(&image, side, &masks);
        let (want, labels) = reference_scores(&feats, 10, &text, side / p, side);
        for (g, w) in got.scores.scores.iter().zip(&want) {
            worst = worst.max((*g as f64 - w).abs());
        }
        ensure!(got.labels.labels == labels, "theta {theta}: label maps differ");
        let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
        ensure!(
            distinct.len() > 1 || theta > 0,
            "degenerate fixture: one class everywhere"
        );
    }
    ensure!(worst < 1e-5, "max score diff {worst:e}");
    Ok(format!("theta 0..=3, max score diff {worst:.2e}, labels identical"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let spec = SyntheticSpec::new(8, 2, 2, 2, 4, 71);
    let ckpt = Checkpoint::synthetic(&spec).map_err(err)?;
    let text = class_embeddings(
        &["field".to_string(), "river".to_string(), "house".to_string()],
        &ToyEncoder::new(8, 3),
    )
    .map_err(err)?;
    let mut rng = SplitMix64::new(7);
    let (h, w) = (16, 24);
    let image = Tensor::new(vec![h, w, 3], (0..h * w * 3).map(|_| rng.symmetric_f32(1.0)).collect()).map_err(err)?;
    let segmenter = |stride: usize, exec: Execution| {
        let enc = Encoder::new(&ckpt, EncoderConfig::from_meta(&ckpt.meta, 0).unwrap()).unwrap();
        let cfg = SlidingWindowConfig {
            tile: 8,
            stride,
            pad: true,
            averaging: ScoreAveraging::Similarity,
        };
        Segmenter::new(enc, cfg, &text, exec).unwrap()
    };
    let enc = Encoder::new(&ckpt, EncoderConfig::from_meta(&ckpt.meta, 0).map_err(err)?).map_err(err)?;
    let tile_scores = |y: usize, x: usize| -> Result<Vec<f32>, String> {
        let crop = crop_image(&image, Window { y, x, size: 8 }).map_err(err)?;
        let f = enc.encode(&crop, None).map_err(err)?;
        let low = similarity_map(&f, 4, 4, &text).map_err(err)?;
        let up = reseg::numerics::bilinear_upsample(&low.to_tensor().map_err(err)?, 8, 8).map_err(err)?;
        Ok(up.into_data())
    };

    // stride = tile: stitch independent tiles
    let tiled = segmenter(8, Execution::Sequential)
        .segment(&image, &NoMasks)
        .map_err(err)?;
    for ty in (0..h).step_by(8) {
        for tx in (0..w).step_by(8) {
            let t = tile_scores(ty, tx)?;
            for y in 0..8 {
                for x in 0..8 {
                    let got = tiled.scores.pixel(ty + y, tx + x);
                    let want = &t[(y * 8 + x) * 3..][..3];
                    ensure!(got == want, "stride=tile mismatch at ({}, {})", ty + y, tx + x);
                }
            }
        }
    }

    // overlapping: f64 sum / count oracle
    let stride = 3;
    let overl = segmenter(stride, Execution::Sequential)
        .segment(&image, &NoMasks)
        .map_err(err)?;
    let mut sum = vec![0.0f64; h * w * 3];
    let mut count = vec![0u32; h * w];
    for &ty in &tile_offsets(h, 8, stride) {
        for &tx in &tile_offsets(w, 8, stride) {
            let t = tile_scores(ty, tx)?;
            for y in 0..8 {
                for x in 0..8 {
                    count[(ty + y) * w + tx + x] += 1;
                    for c in 0..3 {
                        sum[((ty + y) * w + tx + x) * 3 + c] += t[(y * 8 + x) * 3 + c] as f64;
                    }
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for (i, &s) in sum.iter().enumerate() {
        ensure!(count[i / 3] > 0, "pixel {} never covered", i / 3);
        worst = worst.max((overl.scores.scores[i] as f64 - s / count[i / 3] as f64).abs());
    }
    ensure!(worst < 1e-6, "sum/count oracle diff {worst:e}");

    let one = with_threads(1, || segmenter(stride, Execution::Parallel).segment(&image, &NoMasks))
        .map_err(err)?
        .map_err(err)?;
    let four = with_threads(4, || segmenter(stride, Execution::Parallel).segment(&image, &NoMasks))
        .map_err(err)?
        .map_err(err)?;
    let bits = |s: &reseg::segment::Segmentation| s.scores.scores.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure!(
        bits(&one) == bits(&four) && one.labels == four.labels,
        "threads 1 vs 4 differ"
    );
    ensure!(bits(&one) == bits(&overl), "parallel differs from sequential");
    Ok(format!(
        "stitch exact, oracle diff {worst:.2e}, threads 1/4 bit-identical"
    ))
}

// ---------------------------------------------------------------- 8, 9

fn reseg(args: &[&str], threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reseg"));
    cmd.args(args).env_remove("RESEG_THREADS");
    if let Some(t) = threads {
        cmd.env("RESEG_THREADS", t);
    }
    let out = cmd.output().map_err(err)?;
    ensure!(
        out.status.success(),
        "reseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

const GRAMMAR: &str = r#"{
  "base_prompts": ["meadow", "lake", "roof"],
  "synonyms": [["meadow", "grass"], ["lake", "water"], ["roof", "building"]],
  "prefixes": ["a photo", "an aerial view"],
  "suffixes": ["", "seen from above"],
  "K": 3,
  "seed": 11
}"#;

/// Synthetic scene, masks, checkpoint and grammar in `dir`.
fn fixture(dir: &Path, layers: usize) -> Result<(), String> {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    std::fs::write(dir.join("grammar.json"), GRAMMAR).map_err(err)?;
    reseg(
        &[
            "gen-scene",
            "--height",
            "20",
            "--width",
            "28",
            "--classes",
            "3",
            "--seed",
            "5",
            "--image",
            &d("img.png"),
            "--gt",
            &d("gt.png"),
        ],
        None,
    )?;
    reseg(
        &[
            "gen-masks",
            "--height",
            "20",
            "--width",
            "28",
            "--levels",
            "6",
            "--seed",
            "9",
            "--out-dir",
            &d("masks"),
        ],
        None,
    )?;
    let layers = layers.to_string();
    reseg(
        &[
            "gen-checkpoint",
            "--dim",
            "12",
            "--layers",
            &layers,
            "--heads",
            "2",
            "--patch",
            "2",
            "--grid",
            "4",
            "--seed",
            "3",
            "--out",
            &d("model.ckpt1"),
        ],
        None,
    )?;
    Ok(())
}

fn masks(dir: &Path) -> Vec<String> {
    (0..6)
        .map(|r| {
            dir.join(format!("masks/level_{r:02}.rgl"))
                .to_string_lossy()
                .into_owned()
        })
        .collect()
}

fn criterion_8() -> Outcome {
    use reseg::eval::ConfusionMatrix;
    let fixtures: [(usize, Vec<u64>, Vec<Option<f64>>, f64); 3] = [
        (3, vec![4, 0, 0, 0, 2, 0, 0, 0, 9], vec![Some(1.0); 3], 1.0),
        (2, vec![1, 1, 0, 1], vec![Some(0.5), Some(0.5)], 0.5),
        (
            3,
            vec![2, 1, 0, 0, 3, 0, 0, 0, 0],
            vec![Some(2.0 / 3.0), Some(0.75), None],
            (2.0 / 3.0 + 0.75) / 2.0,
        ),
    ];
    for (c, counts, per_class, miou) in fixtures {
        let r = ConfusionMatrix::from_counts(c, counts.clone())
            .map_err(err)?
            .iou()
            .map_err(err)?;
        ensure!(r.per_class == per_class && r.miou == miou, "fixture {counts:?}: {r:?}");
    }

    let mut outputs = Vec::new();
    for (run, threads) in [Some("1"), Some("4")].into_iter().enumerate() {
        let dir = tempfile::tempdir().map_err(err)?;
        fixture(dir.path(), 6)?;
        let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
        let mut args: Vec<String> = [
            "segment",
            "--checkpoint",
            &d("model.ckpt1"),
            "--image",
            &d("img.png"),
            "--grammar",
            &d("grammar.json"),
            "--toy-encoder",
            "2",
            "--tile",
            "8",
            "--stride",
            "4",
            "--theta",
            "6",
            "--out-labels",
            &d("pred.png"),
            "--masks",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend(masks(dir.path()));
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        reseg(&argv, threads)?;
        let json = reseg(
            &["eval", "--gt", &d("gt.png"), "--pred", &d("pred.png"), "--classes", "3"],
            threads,
        )?;
        let labels = std::fs::read(d("pred.png")).map_err(err)?;
        outputs.push((run, json, labels));
    }
    ensure!(outputs[0].1 == outputs[1].1, "eval JSON differs between runs");
    ensure!(outputs[0].2 == outputs[1].2, "label PNG differs between runs");
    let v: serde_json::Value = serde_json::from_slice(&outputs[0].1).map_err(err)?;
    ensure!(v["miou"].is_number(), "eval JSON lacks miou");
    Ok(format!(
        "fixtures exact, two runs byte-identical (mIoU {:.3})",
        v["miou"].as_f64().unwrap()
    ))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    fixture(dir.path(), 18)?;
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let mut args: Vec<String> = [
        "sweep-theta",
        "--checkpoint",
        &d("model.ckpt1"),
        "--image",
        &d("img.png"),
        "--gt",
        &d("gt.png"),
        "--grammar",
        &d("grammar.json"),
        "--toy-encoder",
        "2",
        "--tile",
        "8",
        "--stride",
        "8",
        "--masks",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(masks(dir.path()));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = reseg(&argv, None)?;
    let v: serde_json::Value = serde_json::from_slice(&out).map_err(err)?;
    let grid: Vec<u64> = v["grid"]
        .as_array()
        .ok_or("no grid")?
        .iter()
        .filter_map(|x| x.as_u64())
        .collect();
    ensure!(grid == [0, 1, 3, 6, 12, 18], "grid {grid:?}");
    let entries = v["entries"].as_array().ok_or("no entries")?;
    ensure!(entries.len() == 6, "{} entries", entries.len());
    for (e, &t) in entries.iter().zip(&grid) {
        ensure!(e["theta"].as_u64() == Some(t), "entry theta {} vs {t}", e["theta"]);
        let m = e["miou"].as_f64().ok_or("entry without numeric miou")?;
        ensure!((0.0..=1.0).contains(&m), "mIoU {m} out of range");
    }
    let mious: Vec<String> = entries
        .iter()
        .map(|e| format!("{:.3}", e["miou"].as_f64().unwrap()))
        .collect();
    Ok(format!("grid {grid:?}, mIoU [{}]", mious.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("masked softmax vs delete-columns oracle", criterion_1),
        ("neutral hierarchy leaves encoder output unchanged", criterion_2),
        ("region mask block structure", criterion_3),
        ("PVSM analytic cases and weight normalisation", criterion_4),
        ("checkpoint merge correctness", criterion_5),
        ("end-to-end vs straight-line reference", criterion_6),
        ("sliding-window semantics", criterion_7),
        ("mIoU fixtures and CLI determinism", criterion_8),
        ("sweep-theta grid and schema", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: panicked", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
