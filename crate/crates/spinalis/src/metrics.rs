//! Segmentation evaluation: IoU, class accuracy, Dice, batch mean IoU.
//!
//! A voxel counts as positive when its label is nonzero, so the same code
//! evaluates {0,1} test masks and {0,100} pipeline masks. Metrics with an
//! empty union return `None` rather than an arbitrary 0 or 1 so that batch
//! means are never silently inflated.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::regions::mask_components;
use crate::volume::{Mask2d, MaskVolume};

/// Whether counts were tallied per voxel or per slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pixel,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub level: Level,
}

impl ConfusionCounts {
    pub fn population(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Tally a confusion matrix between a predicted and a truth mask.
///
/// Pixel level compares voxels one by one. Image level scores each sagittal
/// slice once: a slice with truth tumor is a TP when any predicted component
/// overlaps the truth and an FN otherwise; a slice without truth tumor is an
/// FP when anything was predicted (a component with no truth overlap) and a
/// TN otherwise.
pub fn confusion_counts(pred: &MaskVolume, truth: &MaskVolume, level: Level) -> Result<ConfusionCounts> {
    if !pred.same_geometry(truth) {
        return Err(validation!("prediction and truth geometries differ"));
    }
    match level {
        Level::Pixel => {
            let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0, level };
            for (p, t) in pred.labels().iter().zip(truth.labels()) {
                match (*p != 0, *t != 0) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            Ok(c)
        }
        Level::Image => {
            let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0, level };
            for z in 0..pred.depth() {
                let ps = pred.extract_slice(z)?;
                let ts = truth.extract_slice(z)?;
                let pred_bin = Mask2d::from_fn(pred.width(), pred.height(), |col, row| {
                    ps.get(col, row) != 0
                });
                let truth_any = ts.labels().iter().any(|l| *l != 0);
                if truth_any {
                    let overlap = pred_bin
                        .iter_set()
                        .any(|(col, row)| ts.get(col, row) != 0);
                    if overlap {
                        c.tp += 1;
                    } else {
                        c.fn_ += 1;
                    }
                } else if !pred_bin.is_empty() {
                    // every predicted component here has no truth overlap
                    debug_assert!(!mask_components(&pred_bin).1.is_empty());
                    c.fp += 1;
                } else {
                    c.tn += 1;
                }
            }
            Ok(c)
        }
    }
}

/// IoU = TP / (TP + FP + FN); `None` when the union is empty.
pub fn iou(c: &ConfusionCounts) -> Option<f64> {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        None
    } else {
        Some(c.tp as f64 / denom as f64)
    }
}

/// Class accuracy = (TN + TP) / (TN + TP + FP + FN).
pub fn class_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let pop = c.population();
    if pop == 0 {
        return Err(validation!("class accuracy undefined for zero population"));
    }
    Ok((c.tn + c.tp) as f64 / pop as f64)
}

/// Dice = 2|X ∩ Y| / (|X| + |Y|) over the positive voxel sets of two masks;
/// `None` when both masks are empty.
pub fn dice(pred: &MaskVolume, truth: &MaskVolume) -> Result<Option<f64>> {
    if !pred.same_geometry(truth) {
        return Err(validation!("prediction and truth geometries differ"));
    }
    let mut inter = 0u64;
    let mut pred_n = 0u64;
    let mut truth_n = 0u64;
    for (p, t) in pred.labels().iter().zip(truth.labels()) {
        let (p, t) = (*p != 0, *t != 0);
        pred_n += u64::from(p);
        truth_n += u64::from(t);
        inter += u64::from(p && t);
    }
    if pred_n + truth_n == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * inter as f64 / (pred_n + truth_n) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanIou {
    pub mean: f64,
    /// Samples whose IoU was undefined (empty union) and were skipped.
    pub skipped: usize,
}

/// Arithmetic mean of per-sample IoU over a batch of (pred, truth) pairs,
/// skipping undefined samples.
pub fn mean_iou(batch: &[(MaskVolume, MaskVolume)]) -> Result<MeanIou> {
    if batch.is_empty() {
        return Err(validation!("mean IoU of an empty batch"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (pred, truth) in batch {
        let counts = confusion_counts(pred, truth, Level::Pixel)?;
        match iou(&counts) {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    if n == 0 {
        return Err(validation!("every sample in the batch had undefined IoU"));
    }
    Ok(MeanIou { mean: sum / n as f64, skipped })
}

/// Per-volume metric block for JSON reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeReport {
    pub id: String,
    pub counts: ConfusionCounts,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub class_accuracy: f64,
}

/// Corpus-aggregate block: summed counts plus averages of defined samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub volumes: Vec<VolumeReport>,
    pub total_counts: ConfusionCounts,
    pub mean_iou: Option<f64>,
    pub mean_dice: Option<f64>,
    pub class_accuracy: f64,
    pub skipped_iou: usize,
    pub skipped_dice: usize,
}

pub fn evaluate_volume(id: &str, pred: &MaskVolume, truth: &MaskVolume) -> Result<VolumeReport> {
    let counts = confusion_counts(pred, truth, Level::Pixel)?;
    Ok(VolumeReport {
        id: id.to_string(),
        iou: iou(&counts),
        dice: dice(pred, truth)?,
        class_accuracy: class_accuracy(&counts)?,
        counts,
    })
}

pub fn aggregate(volumes: Vec<VolumeReport>) -> Result<CorpusReport> {
    if volumes.is_empty() {
        return Err(validation!("cannot aggregate an empty report set"));
    }
    let mut total = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0, level: Level::Pixel };
    let (mut iou_sum, mut iou_n, mut skipped_iou) = (0.0, 0usize, 0usize);
    let (mut dice_sum, mut dice_n, mut skipped_dice) = (0.0, 0usize, 0usize);
    for v in &volumes {
        total.tp += v.counts.tp;
        total.fp += v.counts.fp;
        total.fn_ += v.counts.fn_;
        total.tn += v.counts.tn;
        match v.iou {
            Some(x) => {
                iou_sum += x;
                iou_n += 1;
            }
            None => skipped_iou += 1,
        }
        match v.dice {
            Some(x) => {
                dice_sum += x;
                dice_n += 1;
            }
            None => skipped_dice += 1,
        }
    }
    Ok(CorpusReport {
        mean_iou: (iou_n > 0).then(|| iou_sum / iou_n as f64),
        mean_dice: (dice_n > 0).then(|| dice_sum / dice_n as f64),
        class_accuracy: class_accuracy(&total)?,
        skipped_iou,
        skipped_dice,
        total_counts: total,
        volumes,
    })
}
