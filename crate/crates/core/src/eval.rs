//! Confusion matrices, per-class IoU and mIoU, and the masked-layer sweep
//! report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::segment::LabelMap;

/// Masked-layer counts the sweep harness visits.
pub const THETA_GRID: [usize; 6] = [0, 1, 3, 6, 12, 18];

/// `C×C` pixel counts; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
    pub ignore_label: Option<u32>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, ignore_label: Option<u32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InsufficientClasses(0));
        }
        Ok(Self {
            classes,
            counts: vec![0; classes * classes],
            ignore_label,
        })
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim(format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self {
            classes,
            counts,
            ignore_label: None,
        })
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count every pixel pair of one image.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.height, gt.width) != (pred.height, pred.width) {
            return Err(Error::dim(format!(
                "ground truth is {}x{}, prediction {}x{}",
                gt.height, gt.width, pred.height, pred.width
            )));
        }
        let c = self.classes as u32;
        // validate first so a bad pixel leaves the matrix untouched
        for (i, (&g, &p)) in gt.labels.iter().zip(&pred.labels).enumerate() {
            if Some(g) == self.ignore_label {
                continue;
            }
            if g >= c {
                return Err(Error::Data(format!(
                    "ground-truth label {g} at pixel {i} outside 0..{c}"
                )));
            }
            if p >= c {
                return Err(Error::Data(format!("predicted label {p} at pixel {i} outside 0..{c}")));
            }
        }
        for (&g, &p) in gt.labels.iter().zip(&pred.labels) {
            if Some(g) != self.ignore_label {
                self.counts[g as usize * self.classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim(format!(
                "merging {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU (None for zero-union classes) and their mean.
    pub fn iou(&self) -> Result<IouReport> {
        let n = self.classes;
        let mut per_class = Vec::with_capacity(n);
        let mut pixels = Vec::with_capacity(n);
        for c in 0..n {
            let tp = self.get(c, c);
            let fn_: u64 = (0..n).map(|p| self.get(c, p)).sum::<u64>() - tp;
            let fp: u64 = (0..n).map(|g| self.get(g, c)).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            per_class.push((union > 0).then(|| tp as f64 / union as f64));
            pixels.push(tp + fn_);
        }
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(IouReport {
            per_class,
            miou,
            gt_pixels: pixels,
            total_pixels: self.total(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    /// Ground-truth pixels per class.
    pub gt_pixels: Vec<u64>,
    pub total_pixels: u64,
}

/// Sum confusion matrices over many (ground truth, prediction) pairs.
pub fn evaluate(
    pairs: &[(LabelMap, LabelMap)],
    classes: usize,
    ignore_label: Option<u32>,
    exec: Execution,
) -> Result<ConfusionMatrix> {
    let parts = exec.try_map(pairs, |(gt, pred)| {
        let mut cm = ConfusionMatrix::new(classes, ignore_label)?;
        cm.accumulate(gt, pred)?;
        Ok(cm)
    })?;
    let mut total = ConfusionMatrix::new(classes, ignore_label)?;
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub theta: usize,
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: Vec<usize>,
    pub entries: Vec<SweepEntry>,
}

/// Run `eval_at` for each masked-layer count in `grid`, in order.
pub fn sweep(grid: &[usize], mut eval_at: impl FnMut(usize) -> Result<IouReport>) -> Result<SweepReport> {
    let mut entries = Vec::with_capacity(grid.len());
    for &theta in grid {
        let r = eval_at(theta)?;
        entries.push(SweepEntry {
            theta,
            miou: r.miou,
            per_class: r.per_class,
        });
    }
    Ok(SweepReport {
        grid: grid.to_vec(),
        entries,
    })
}
