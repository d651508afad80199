//! Dense prediction: patch–text cosine similarity, bilinear upsampling,
//! argmax labelling and overlapping sliding-window inference.

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, FeatureSet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{bilinear_upsample, cosine_similarity, masked_softmax_row, Tensor};
use crate::regions::{build_hierarchy, MaskHierarchy, RegionLabelImage};

/// Per-pixel class scores, stored pixel-major with classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub scores: Vec<f32>,
}

impl SimilarityMap {
    pub fn new(height: usize, width: usize, classes: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != height * width * classes {
            return Err(Error::dim(format!(
                "{height}x{width}x{classes} score map with {} values",
                scores.len()
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            scores,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        &self.scores[(y * self.width + x) * self.classes..][..self.classes]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.height, self.width, self.classes], self.scores.clone())
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w, c] => Self::new(h, w, c, t.into_data()),
            _ => Err(Error::dim(format!("expected H×W×C scores, got {:?}", t.shape()))),
        }
    }
}

/// Class index per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} label map with {} labels",
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// Cosine similarity between every patch token (CLS skipped) and every
/// class embedding, laid out on the `rows × cols` patch grid.
pub fn similarity_map(features: &FeatureSet, rows: usize, cols: usize, text: &Tensor) -> Result<SimilarityMap> {
    let (classes, d) = text.dims2()?;
    if features.patch_count() != rows * cols {
        return Err(Error::dim(format!(
            "{} patch tokens for a {rows}x{cols} grid",
            features.patch_count()
        )));
    }
    if features.dim() != d {
        return Err(Error::dim(format!(
            "feature width {} vs text embedding width {d}",
            features.dim()
        )));
    }
    let mut scores = Vec::with_capacity(rows * cols * classes);
    for f in features.patches() {
        for t in text.rows() {
            scores.push(cosine_similarity(f, t)?);
        }
    }
    SimilarityMap::new(rows, cols, classes, scores)
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax(sim: &SimilarityMap) -> LabelMap {
    let labels = sim
        .scores
        .chunks_exact(sim.classes)
        .map(|px| {
            let mut best = 0;
            for (c, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    LabelMap {
        height: sim.height,
        width: sim.width,
        labels,
    }
}

/// Bilinearly resample the class scores to `height × width` and label
/// each pixel.
pub fn upsample_and_label(sim_low: &SimilarityMap, height: usize, width: usize) -> Result<(SimilarityMap, LabelMap)> {
    let up = bilinear_upsample(&sim_low.to_tensor()?, height, width)?;
    let sim = SimilarityMap::from_tensor(up)?;
    let labels = argmax(&sim);
    Ok((sim, labels))
}

/// What the sliding window averages over overlapping tiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScoreAveraging {
    /// Raw cosine similarities.
    Similarity,
    /// Per-pixel softmax over classes of `logit_scale · similarity`.
    Probability { logit_scale: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowConfig {
    pub tile: usize,
    pub stride: usize,
    /// Reflect-pad images smaller than one tile.
    pub pad: bool,
    pub averaging: ScoreAveraging,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        Self {
            tile: 224,
            stride: 50,
            pad: true,
            averaging: ScoreAveraging::Similarity,
        }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.stride == 0 || self.stride > self.tile {
            return Err(Error::Config(format!(
                "stride {} must lie in 1..={}",
                self.stride, self.tile
            )));
        }
        Ok(())
    }
}

/// Tile start offsets along one axis of length `extent ≥ tile`. Offsets
/// step by `stride`; the last tile is pulled back to end at the border.
pub fn tile_offsets(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    assert!(extent >= tile && stride > 0);
    let mut offsets = Vec::new();
    let mut p = 0;
    loop {
        if p + tile >= extent {
            offsets.push(extent - tile);
            return offsets;
        }
        offsets.push(p);
        p += stride;
    }
}

/// Reflect an index into `0..n` (edge pixel not repeated).
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Square window on the (possibly padded) canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub y: usize,
    pub x: usize,
    pub size: usize,
}

/// Supplies the attention-mask hierarchy for each tile.
pub trait MaskSource: Sync {
    /// Hierarchy depth this source produces.
    fn levels(&self) -> usize;
    fn hierarchy(&self, window: Window) -> Result<Option<MaskHierarchy>>;
}

/// No region constraints.
pub struct NoMasks;

impl MaskSource for NoMasks {
    fn levels(&self) -> usize {
        0
    }

    fn hierarchy(&self, _: Window) -> Result<Option<MaskHierarchy>> {
        Ok(None)
    }
}

/// Full-image label rasters (coarse → fine), cropped per tile with the
/// same reflection the image gets.
pub struct RasterMasks {
    levels: Vec<RegionLabelImage>,
    patch: usize,
}

impl RasterMasks {
    pub fn new(levels: Vec<RegionLabelImage>, patch: usize) -> Result<Self> {
        if let Some(first) = levels.first() {
            if let Some(bad) = levels
                .iter()
                .position(|l| (l.height, l.width) != (first.height, first.width))
            {
                return Err(Error::dim(format!("mask level {bad} differs in size from level 0")));
            }
        }
        Ok(Self { levels, patch })
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.levels.first().map(|l| (l.height, l.width))
    }
}

fn crop_reflect(img: &RegionLabelImage, w: Window) -> RegionLabelImage {
    let mut labels = Vec::with_capacity(w.size * w.size);
    for y in w.y..w.y + w.size {
        let sy = reflect_index(y, img.height);
        for x in w.x..w.x + w.size {
            labels.push(img.get(sy, reflect_index(x, img.width)));
        }
    }
    RegionLabelImage {
        height: w.size,
        width: w.size,
        labels,
        provenance: img.provenance.clone(),
    }
}

impl MaskSource for RasterMasks {
    fn levels(&self) -> usize {
        self.levels.len()
    }

    fn hierarchy(&self, window: Window) -> Result<Option<MaskHierarchy>> {
        if self.levels.is_empty() {
            return Ok(None);
        }
        let crops: Vec<RegionLabelImage> = self.levels.iter().map(|l| crop_reflect(l, window)).collect();
        build_hierarchy(&crops, self.patch, Execution::Sequential).map(Some)
    }
}

/// Which of `available` coarse→fine rasters each of `theta` masked layers
/// uses. Layers are split into `available` contiguous blocks ending on the
/// finest raster; with fewer layers than rasters the finest ones win.
pub fn select_levels(available: usize, theta: usize) -> Result<Vec<usize>> {
    if theta > 0 && available == 0 {
        return Err(Error::Config(format!(
            "{theta} masked layers need at least one mask level"
        )));
    }
    Ok((0..theta).map(|r| ((r + 1) * available).div_ceil(theta) - 1).collect())
}

/// Crop a `size×size` window of an `H×W×3` image, reflecting past the border.
pub fn crop_image(image: &Tensor, window: Window) -> Result<Tensor> {
    let (h, w, ch) = match *image.shape() {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::dim(format!("expected H×W×C image, got {:?}", image.shape()))),
    };
    let mut out = Vec::with_capacity(window.size * window.size * ch);
    for y in window.y..window.y + window.size {
        let sy = reflect_index(y, h);
        for x in window.x..window.x + window.size {
            let sx = reflect_index(x, w);
            out.extend_from_slice(&image.data()[(sy * w + sx) * ch..][..ch]);
        }
    }
    Tensor::new(vec![window.size, window.size, ch], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub scores: SimilarityMap,
    pub labels: LabelMap,
}

/// Tiles processed per parallel batch; bounds peak memory. Accumulation
/// order does not depend on it.
const TILE_BATCH: usize = 32;

/// Sliding-window segmenter bound to one encoder and one class-embedding
/// matrix (`C×D`).
pub struct Segmenter<'a> {
    encoder: Encoder<'a>,
    window: SlidingWindowConfig,
    text: &'a Tensor,
    exec: Execution,
}

impl<'a> Segmenter<'a> {
    pub fn new(encoder: Encoder<'a>, window: SlidingWindowConfig, text: &'a Tensor, exec: Execution) -> Result<Self> {
        window.validate()?;
        let patch = encoder.config().patch;
        if !window.tile.is_multiple_of(patch) {
            return Err(Error::Config(format!(
                "tile {} is not a multiple of the patch size {patch}",
                window.tile
            )));
        }
        let native = encoder.checkpoint().image_size()?;
        if native != window.tile {
            return Err(Error::Config(format!(
                "tile {} differs from the checkpoint input size {native}",
                window.tile
            )));
        }
        let (_, d) = text.dims2()?;
        let fd = encoder.checkpoint().feature_dim();
        if d != fd {
            return Err(Error::dim(format!("text embeddings have width {d}, features {fd}")));
        }
        Ok(Self {
            encoder,
            window,
            text,
            exec,
        })
    }

    pub fn window(&self) -> &SlidingWindowConfig {
        &self.window
    }

    /// Scores for one tile at tile resolution, after upsampling and the
    /// optional softmax.
    pub fn tile_scores(&self, image: &Tensor, window: Window, masks: &dyn MaskSource) -> Result<SimilarityMap> {
        let tile = crop_image(image, window)?;
        let hierarchy = masks.hierarchy(window)?;
        let features = self.encoder.encode(&tile, hierarchy.as_ref())?;
        let grid = window.size / self.encoder.config().patch;
        let low = similarity_map(&features, grid, grid, self.text)?;
        let mut up = SimilarityMap::from_tensor(bilinear_upsample(&low.to_tensor()?, window.size, window.size)?)?;
        if let ScoreAveraging::Probability { logit_scale } = self.window.averaging {
            for px in up.scores.chunks_exact_mut(up.classes) {
                px.iter_mut().for_each(|v| *v *= logit_scale);
                masked_softmax_row(px, None);
            }
        }
        Ok(up)
    }

    /// Canvas size after padding and the tile windows, in raster order.
    pub fn plan(&self, height: usize, width: usize) -> Result<((usize, usize), Vec<Window>)> {
        let tile = self.window.tile;
        if (height < tile || width < tile) && !self.window.pad {
            return Err(Error::dim(format!(
                "{height}x{width} image is smaller than the {tile}-pixel tile and padding is off"
            )));
        }
        let (ph, pw) = (height.max(tile), width.max(tile));
        let ys = tile_offsets(ph, tile, self.window.stride);
        let xs = tile_offsets(pw, tile, self.window.stride);
        let windows = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Window { y, x, size: tile }))
            .collect();
        Ok(((ph, pw), windows))
    }

    /// Segment an `H×W×3` preprocessed image.
    pub fn segment(&self, image: &Tensor, masks: &dyn MaskSource) -> Result<Segmentation> {
        let (height, width) = match *image.shape() {
            [h, w, 3] => (h, w),
            _ => return Err(Error::dim(format!("expected H×W×3 image, got {:?}", image.shape()))),
        };
        let levels = self.encoder.config().masked_layers;
        if masks.levels() != levels {
            return Err(Error::Config(format!(
                "{levels} masked layers configured but {} mask levels supplied",
                masks.levels()
            )));
        }
        let ((ph, pw), windows) = self.plan(height, width)?;
        let classes = self.text.shape()[0];
        let mut sums = vec![0.0f32; ph * pw * classes];
        let mut counts = vec![0u32; ph * pw];
        for batch in windows.chunks(TILE_BATCH) {
            let tiles = self.exec.try_map(batch, |&w| self.tile_scores(image, w, masks))?;
            for (w, t) in batch.iter().zip(&tiles) {
                for ty in 0..w.size {
                    let row = (w.y + ty) * pw + w.x;
                    for tx in 0..w.size {
                        counts[row + tx] += 1;
                        let dst = &mut sums[(row + tx) * classes..][..classes];
                        for (d, s) in dst.iter_mut().zip(t.pixel(ty, tx)) {
                            *d += s;
                        }
                    }
                }
            }
        }
        let mut scores = Vec::with_capacity(height * width * classes);
        for y in 0..height {
            for x in 0..width {
                let n = counts[y * pw + x] as f32;
                scores.extend(sums[(y * pw + x) * classes..][..classes].iter().map(|s| s / n));
            }
        }
        let scores = SimilarityMap::new(height, width, classes, scores)?;
        let labels = argmax(&scores);
        Ok(Segmentation { scores, labels })
    }
}
