//! Seeded synthetic data: Voronoi region rasters and toy scenes with
//! ground truth, so the pipeline runs without external data.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::regions::RegionLabelImage;
use crate::rng::{derive_seed, SplitMix64};
use crate::segment::LabelMap;

/// `k` distinct pixel positions as (y, x).
fn seed_points(height: usize, width: usize, k: usize, rng: &mut SplitMix64) -> Result<Vec<(usize, usize)>> {
    let n = height * width;
    if k == 0 || k > n {
        return Err(Error::Config(format!("{k} seed points on a {height}x{width} raster")));
    }
    let mut taken = vec![false; n];
    let mut pts = Vec::with_capacity(k);
    while pts.len() < k {
        let i = rng.below(n);
        if !taken[i] {
            taken[i] = true;
            pts.push((i / width, i % width));
        }
    }
    Ok(pts)
}

/// Index of the nearest point for every pixel; ties to the lowest index.
fn nearest(height: usize, width: usize, pts: &[(usize, usize)]) -> Vec<u32> {
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let mut best = (usize::MAX, 0u32);
            for (i, &(py, px)) in pts.iter().enumerate() {
                let d = y.abs_diff(py).pow(2) + x.abs_diff(px).pow(2);
                if d < best.0 {
                    best = (d, i as u32);
                }
            }
            out.push(best.1);
        }
    }
    out
}

/// Voronoi partition with exactly `k` regions labelled `1..=k`.
pub fn voronoi(height: usize, width: usize, k: usize, seed: u64) -> Result<RegionLabelImage> {
    let mut rng = SplitMix64::new(seed);
    let pts = seed_points(height, width, k, &mut rng)?;
    let labels = nearest(height, width, &pts).into_iter().map(|i| i + 1).collect();
    RegionLabelImage::new(height, width, labels, format!("voronoi k={k} seed={seed}"))
}

/// One Voronoi raster per entry of `counts` (which must strictly
/// increase), coarse first.
pub fn mask_levels(height: usize, width: usize, counts: &[usize], seed: u64) -> Result<Vec<RegionLabelImage>> {
    if let Some(w) = counts.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "region counts must strictly increase, got {} then {}",
            w[0], w[1]
        )));
    }
    counts
        .iter()
        .enumerate()
        .map(|(r, &k)| voronoi(height, width, k, derive_seed(seed, r as u64)))
        .collect()
}

/// Default region counts for `levels` levels: 2, 4, 8, … capped so the
/// sequence stays strictly increasing within the pixel count.
pub fn default_counts(levels: usize, pixels: usize) -> Result<Vec<usize>> {
    if levels > pixels {
        return Err(Error::Config(format!("{levels} levels need more than {pixels} pixels")));
    }
    let mut counts: Vec<usize> = (0..levels).map(|r| 2usize.saturating_pow(r as u32 + 1)).collect();
    // pull the tail under the pixel budget while keeping it increasing
    for r in (0..levels).rev() {
        let cap = pixels - (levels - 1 - r);
        counts[r] = counts[r].min(cap);
        if r + 1 < levels {
            counts[r] = counts[r].min(counts[r + 1] - 1);
        }
    }
    Ok(counts)
}

/// Toy scene: Voronoi cells each painted with a class colour plus noise;
/// the cell classes form the ground truth.
pub fn scene(height: usize, width: usize, classes: usize, cells: usize, seed: u64) -> Result<(RgbImage, LabelMap)> {
    if classes == 0 {
        return Err(Error::InsufficientClasses(0));
    }
    let mut rng = SplitMix64::new(seed);
    let pts = seed_points(height, width, cells, &mut rng)?;
    let cell_class: Vec<u32> = (0..cells).map(|_| rng.below(classes) as u32).collect();
    let palette: Vec<[f32; 3]> = (0..classes)
        .map(|_| [rng.unit_f32(), rng.unit_f32(), rng.unit_f32()])
        .collect();
    let owner = nearest(height, width, &pts);
    let labels: Vec<u32> = owner.iter().map(|&i| cell_class[i as usize]).collect();
    let mut px = Vec::with_capacity(height * width * 3);
    for &l in &labels {
        for c in palette[l as usize] {
            let v = (c + rng.symmetric_f32(0.05)).clamp(0.0, 1.0);
            px.push((v * 255.0).round() as u8);
        }
    }
    let img = RgbImage::from_raw(width as u32, height as u32, px)
        .ok_or_else(|| Error::dim(format!("{height}x{width} scene")))?;
    Ok((img, LabelMap::new(height, width, labels)?))
}
