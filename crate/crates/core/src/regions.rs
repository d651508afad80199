//! Region label images, patch-level region indices and the region-equality
//! attention masks derived from them.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Pixel-level region labels. `0` is background, `q ≥ 1` a region index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabelImage {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    /// Opaque record of the mask-generator configuration.
    pub provenance: String,
}

impl RegionLabelImage {
    pub fn new(height: usize, width: usize, labels: Vec<u32>, provenance: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("label image with zero extent"));
        }
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} label image with {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn uniform(height: usize, width: usize, label: u32) -> Result<Self> {
        Self::new(height, width, vec![label; height * width], "")
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Largest label present (`Q_r`).
    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Copy of the window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::dim(format!(
                "crop {h}x{w}+{y0}+{x0} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut labels = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            labels.extend_from_slice(&self.labels[y * self.width + x0..][..w]);
        }
        Self::new(h, w, labels, self.provenance.clone())
    }

    pub fn write_rgl(&self, mut w: impl Write) -> Result<()> {
        let prov = self.provenance.as_bytes();
        let prov_len =
            u16::try_from(prov.len()).map_err(|_| Error::Data("provenance string longer than 65535 bytes".into()))?;
        let height = u32::try_from(self.height).map_err(|_| Error::dim("height exceeds u32"))?;
        let width = u32::try_from(self.width).map_err(|_| Error::dim("width exceeds u32"))?;
        let mut buf = Vec::with_capacity(16 + 4 * self.labels.len() + prov.len());
        buf.extend_from_slice(RGL_MAGIC);
        buf.extend_from_slice(&height.to_le_bytes());
        buf.extend_from_slice(&width.to_le_bytes());
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf.extend_from_slice(&prov_len.to_le_bytes());
        buf.extend_from_slice(prov);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_rgl(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |msg: &str| Error::Format {
            kind: "rgl",
            msg: msg.to_string(),
        };
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != RGL_MAGIC {
            return Err(bad("bad magic"));
        }
        let height = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("dimensions overflow"))?;
        let labels = take(n)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let prov_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let provenance = std::str::from_utf8(take(prov_len)?)
            .map_err(|_| bad("provenance is not UTF-8"))?
            .to_string();
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Self::new(height, width, labels, provenance)
    }

    pub fn save_rgl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::from(e).in_file(path))?;
        self.write_rgl(std::io::BufWriter::new(file))
            .map_err(|e| e.in_file(path))
    }

    pub fn load_rgl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::read_rgl(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))
    }
}

const RGL_MAGIC: &[u8; 4] = b"RGL1";

/// Combine binary region masks into one label image. A pixel takes the
/// 1-based index of the first mask covering it; uncovered pixels are 0.
pub fn combine_masks(height: usize, width: usize, masks: &[Vec<bool>]) -> Result<RegionLabelImage> {
    let mut labels = vec![0u32; height * width];
    for (q, mask) in masks.iter().enumerate() {
        if mask.len() != height * width {
            return Err(Error::dim(format!(
                "mask {q} has {} pixels, expected {height}x{width}",
                mask.len()
            )));
        }
        let index = q as u32 + 1;
        for (l, &m) in labels.iter_mut().zip(mask) {
            if m && *l == 0 {
                *l = index;
            }
        }
    }
    RegionLabelImage::new(height, width, labels, "")
}

/// Dominant region per patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionIndexGrid {
    pub rows: usize,
    pub cols: usize,
    pub index: Vec<u32>,
}

impl RegionIndexGrid {
    pub fn new(rows: usize, cols: usize, index: Vec<u32>) -> Result<Self> {
        if index.len() != rows * cols {
            return Err(Error::dim(format!("{rows}x{cols} grid with {} entries", index.len())));
        }
        Ok(Self { rows, cols, index })
    }

    /// Number of patch tokens.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Majority vote over each `patch×patch` block. Ties go to the smallest label.
pub fn patch_region_index(labels: &RegionLabelImage, patch: usize) -> Result<RegionIndexGrid> {
    if patch == 0 || !labels.height.is_multiple_of(patch) || !labels.width.is_multiple_of(patch) {
        return Err(Error::dim(format!(
            "{}x{} label image is not divisible into {patch}-pixel patches",
            labels.height, labels.width
        )));
    }
    let rows = labels.height / patch;
    let cols = labels.width / patch;
    let mut index = Vec::with_capacity(rows * cols);
    let mut block = Vec::with_capacity(patch * patch);
    for pr in 0..rows {
        for pc in 0..cols {
            block.clear();
            for y in pr * patch..(pr + 1) * patch {
                block.extend_from_slice(&labels.labels[y * labels.width + pc * patch..][..patch]);
            }
            block.sort_unstable();
            index.push(mode_of_sorted(&block));
        }
    }
    RegionIndexGrid::new(rows, cols, index)
}

fn mode_of_sorted(sorted: &[u32]) -> u32 {
    let (mut best, mut best_count) = (sorted[0], 0usize);
    for run in sorted.chunk_by(|a, b| a == b) {
        // strict comparison keeps the smaller label on ties
        if run.len() > best_count {
            best = run[0];
            best_count = run.len();
        }
    }
    best
}

/// Boolean `(N+1)×(N+1)` attention mask; index 0 is the CLS token.
/// `true` means the query row may attend to the key column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    /// Arbitrary mask. Every row must allow at least one key.
    pub fn from_bits(size: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != size * size {
            return Err(Error::dim(format!("{size}x{size} mask with {} bits", bits.len())));
        }
        if let Some(row) = bits.chunks_exact(size).position(|r| !r.contains(&true)) {
            return Err(Error::DegenerateRow { row });
        }
        Ok(Self { size, bits })
    }

    /// Mask that allows every interaction (equivalent to no mask).
    pub fn all_allowed(size: usize) -> Self {
        Self {
            size,
            bits: vec![true; size * size],
        }
    }

    /// Each token attends only to itself.
    pub fn diagonal(size: usize) -> Self {
        let mut bits = vec![false; size * size];
        for i in 0..size {
            bits[i * size + i] = true;
        }
        Self { size, bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.size + b]
    }

    pub fn row(&self, a: usize) -> &[bool] {
        &self.bits[a * self.size..(a + 1) * self.size]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Region-equality mask: CLS attends only to itself, patch tokens attend to
/// exactly the patches sharing their region index (background included).
pub fn build_attention_mask(ri: &RegionIndexGrid) -> AttentionMask {
    let size = ri.len() + 1;
    let mut bits = vec![false; size * size];
    bits[0] = true;
    for (a, ra) in ri.index.iter().enumerate() {
        let row = &mut bits[(a + 1) * size..(a + 2) * size];
        for (b, rb) in ri.index.iter().enumerate() {
            row[b + 1] = ra == rb;
        }
    }
    AttentionMask { size, bits }
}

/// Ordered masks for the final encoder layers; entry `r` applies at layer
/// `L − |Θ| + r` (0-based `r`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskHierarchy {
    masks: Vec<AttentionMask>,
}

impl MaskHierarchy {
    pub fn new(masks: Vec<AttentionMask>) -> Result<Self> {
        if let Some(first) = masks.first() {
            if let Some(bad) = masks.iter().position(|m| m.size != first.size) {
                return Err(Error::dim(format!(
                    "hierarchy level {bad} has size {}, level 0 has {}",
                    masks[bad].size, first.size
                )));
            }
        }
        Ok(Self { masks })
    }

    /// `levels` copies of the all-allowed mask.
    pub fn neutral(levels: usize, size: usize) -> Self {
        Self {
            masks: vec![AttentionMask::all_allowed(size); levels],
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[AttentionMask] {
        &self.masks
    }

    pub fn token_count(&self) -> Option<usize> {
        self.masks.first().map(AttentionMask::size)
    }
}

/// Build one attention mask per label image, coarse to fine, in order.
pub fn build_hierarchy(label_images: &[RegionLabelImage], patch: usize, exec: Execution) -> Result<MaskHierarchy> {
    if let Some(first) = label_images.first() {
        for (r, img) in label_images.iter().enumerate() {
            if (img.height, img.width) != (first.height, first.width) {
                return Err(Error::dim(format!(
                    "hierarchy level {r} is {}x{}, level 0 is {}x{}",
                    img.height, img.width, first.height, first.width
                )));
            }
        }
    }
    let masks = exec.try_map(label_images, |img| {
        Ok(build_attention_mask(&patch_region_index(img, patch)?))
    })?;
    MaskHierarchy::new(masks)
}
