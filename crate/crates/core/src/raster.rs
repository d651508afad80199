//! Image and label-raster file I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::regions::RegionLabelImage;
use crate::segment::LabelMap;

/// Read an 8-bit RGB image (PNG or binary PPM).
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::from(e).in_file(path))?;
    Ok(img.to_rgb8())
}

/// Scale to [0, 1] and normalise per channel: `(x/255 − mean) / std`.
pub fn preprocess(img: &RgbImage, mean: [f32; 3], std: [f32; 3]) -> Result<Tensor> {
    if let Some(c) = std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::Config(format!("channel {c} std must be positive")));
    }
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .flat_map(|p| (0..3).map(move |c| (p[c] as f32 / 255.0 - mean[c]) / std[c]))
        .collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

fn is_rgl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("rgl"))
}

fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let img = image::open(path).map_err(|e| Error::from(e).in_file(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Format {
                kind: "label png",
                msg: format!(
                    "{}: expected single-channel 8/16-bit, got {:?}",
                    path.display(),
                    other.color()
                ),
            })
        }
    };
    Ok((h, w, labels))
}

/// Region raster from a `.rgl` file or a single-channel PNG.
pub fn load_regions(path: &Path) -> Result<RegionLabelImage> {
    if is_rgl(path) {
        return RegionLabelImage::load_rgl(path);
    }
    let (h, w, labels) = read_label_png(path)?;
    RegionLabelImage::new(h, w, labels, path.display().to_string()).map_err(|e| e.in_file(path))
}

/// Class-index raster from a `.rgl` file or a single-channel PNG.
pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    if is_rgl(path) {
        let r = RegionLabelImage::load_rgl(path)?;
        return LabelMap::new(r.height, r.width, r.labels);
    }
    let (h, w, labels) = read_label_png(path)?;
    LabelMap::new(h, w, labels).map_err(|e| e.in_file(path))
}

pub fn save_labels_png(path: &Path, height: usize, width: usize, labels: &[u32]) -> Result<()> {
    let px = labels
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit a 16-bit PNG"))))
        .collect::<Result<Vec<u16>>>()?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width as u32, height as u32, px)
        .ok_or_else(|| Error::dim(format!("{height}x{width} raster with {} labels", labels.len())))?;
    buf.save(path).map_err(|e| Error::from(e).in_file(path))
}

pub fn save_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    save_labels_png(path, labels.height, labels.width, &labels.labels)
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::from(e).in_file(path))
}
