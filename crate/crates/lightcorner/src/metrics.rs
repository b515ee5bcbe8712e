//! Evaluation metrics: the masked corner regression loss, average distance
//! error, percent error, corner-box IoU, detection rate at IoU thresholds,
//! and the sample-count-weighted aggregate.
//!
//! All three regression metrics share one structure: a per-example mean over
//! corners of the masked distance `|| p * m - t ||`, where the mask weight
//! `m` is 1 for visible corners and a tiny nonzero constant for invisible
//! ones (keeping gradients bounded), then a mean over examples.

use crate::geometry::{CornerPrediction, CropSample, Point, CORNER_COUNT};
use crate::{Error, Result};

/// Mask weight applied to predictions at invisible corners. Nonzero so the
/// gradient through the distance norm stays bounded, small enough that an
/// invisible corner contributes less than 1e-7 to any metric.
pub const INVISIBLE_MASK_WEIGHT: f64 = 1e-8;

/// One evaluated example: predictions and targets in the normalized frame,
/// plus the visibility mask and the light box dimensions used by the
/// percent-error denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalExample {
    pub pred: [[f64; 2]; CORNER_COUNT],
    pub target: [[f64; 2]; CORNER_COUNT],
    pub mask: [bool; CORNER_COUNT],
    /// Ground-truth light box dimensions in scene pixels.
    pub light_box_w: f64,
    pub light_box_h: f64,
}

impl EvalExample {
    pub fn from_sample(sample: &CropSample, pred: &CornerPrediction) -> Self {
        EvalExample {
            pred: pred.corners(),
            target: sample.targets,
            mask: sample.mask,
            light_box_w: sample.light_box_w,
            light_box_h: sample.light_box_h,
        }
    }

    pub fn visible_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Per-corner masked distances and their per-example mean (1/V weighting).
    fn masked_mean_distance(&self) -> f64 {
        let v = self.visible_count() as f64;
        let sum: f64 = (0..CORNER_COUNT).map(|j| self.corner_distance(j)).sum();
        sum / v
    }

    /// `|| p_j * m_j - t_j ||` for corner `j`.
    fn corner_distance(&self, j: usize) -> f64 {
        let m = if self.mask[j] { 1.0 } else { INVISIBLE_MASK_WEIGHT };
        let dx = self.pred[j][0] * m - self.target[j][0];
        let dy = self.pred[j][1] * m - self.target[j][1];
        (dx * dx + dy * dy).sqrt()
    }
}

fn require_visible(batch: &[EvalExample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty evaluation batch".into()));
    }
    if batch.iter().any(|ex| ex.visible_count() == 0) {
        return Err(Error::InvalidInput(
            "example with zero visible corners; the loss divides by the visible count".into(),
        ));
    }
    Ok(())
}

/// Masked corner regression loss:
/// `(1/N) * sum_i (1/V_i) * sum_j || p_ij * M_ij - t_ij ||`.
pub fn masked_corner_loss(batch: &[EvalExample]) -> Result<f64> {
    require_visible(batch)?;
    let sum: f64 = batch.iter().map(EvalExample::masked_mean_distance).sum();
    Ok(sum / batch.len() as f64)
}

/// Gradient of one example's loss term (its `(1/V) * sum_j || . ||`) with
/// respect to the predictions. At the norm's kink (`p * m = t`) the
/// subgradient 0 is chosen.
pub fn loss_gradient_wrt_pred(ex: &EvalExample) -> [[f64; 2]; CORNER_COUNT] {
    let v = ex.visible_count() as f64;
    let mut grad = [[0.0f64; 2]; CORNER_COUNT];
    for j in 0..CORNER_COUNT {
        let m = if ex.mask[j] { 1.0 } else { INVISIBLE_MASK_WEIGHT };
        let dx = ex.pred[j][0] * m - ex.target[j][0];
        let dy = ex.pred[j][1] * m - ex.target[j][1];
        let norm = (dx * dx + dy * dy).sqrt();
        if norm > 0.0 {
            grad[j][0] = m * dx / (norm * v);
            grad[j][1] = m * dy / (norm * v);
        }
    }
    grad
}

/// Average distance error in pixels: the per-example masked corner distance
/// mean scaled back to pixels by the crop half extent.
pub fn average_distance_error(batch: &[EvalExample], half_extent: f64) -> Result<f64> {
    require_visible(batch)?;
    let sum: f64 = batch
        .iter()
        .map(|ex| {
            let v = ex.visible_count() as f64;
            let s: f64 = (0..CORNER_COUNT).map(|j| half_extent * ex.corner_distance(j)).sum();
            s / v
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Result of [`percent_error`]: the mean over included examples plus the
/// number of examples excluded for a degenerate light box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentError {
    pub value: f64,
    pub excluded: usize,
}

/// Percent error: corner distance in pixels normalized by the light box
/// diagonal, `100 * (1/N) * sum_i (1/V_i) * sum_j ||.|| * h / sqrt(W_i^2 + H_i^2)`.
/// Examples with a degenerate box (W or H <= 0) are excluded and counted; a
/// value above 100 means the prediction left the light box.
pub fn percent_error(batch: &[EvalExample], half_extent: f64) -> Result<PercentError> {
    require_visible(batch)?;
    let mut sum = 0.0;
    let mut included = 0usize;
    for ex in batch {
        if !(ex.light_box_w > 0.0 && ex.light_box_h > 0.0) {
            continue;
        }
        let diag = (ex.light_box_w * ex.light_box_w + ex.light_box_h * ex.light_box_h).sqrt();
        let v = ex.visible_count() as f64;
        let s: f64 =
            (0..CORNER_COUNT).map(|j| ex.corner_distance(j) * half_extent / diag).sum();
        sum += s / v;
        included += 1;
    }
    if included == 0 {
        return Err(Error::InvalidInput(
            "every example has a degenerate light box; percent error is undefined".into(),
        ));
    }
    Ok(PercentError { value: 100.0 * sum / included as f64, excluded: batch.len() - included })
}

/// Axis-aligned box used by the IoU detection protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Axis-aligned bounding box over the present points.
pub fn corner_box(points: &[Option<Point>; CORNER_COUNT]) -> Result<Box2D> {
    let mut present = points.iter().flatten();
    let first = present
        .next()
        .ok_or_else(|| Error::InvalidInput("corner box requires at least one point".into()))?;
    let mut b = Box2D { x_min: first.x, y_min: first.y, x_max: first.x, y_max: first.y };
    for p in present {
        b.x_min = b.x_min.min(p.x);
        b.y_min = b.y_min.min(p.y);
        b.x_max = b.x_max.max(p.x);
        b.y_max = b.y_max.max(p.y);
    }
    Ok(b)
}

/// Intersection over union of two boxes. Degenerate (zero-area) boxes yield
/// 0 unless both boxes are identical, which counts as a perfect match.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Fraction of (prediction, ground truth) box pairs whose IoU strictly
/// exceeds each threshold.
pub fn detection_rate(pairs: &[(Box2D, Box2D)], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let hits = pairs.iter().filter(|(p, g)| iou(p, g) > t).count();
            let rate = if pairs.is_empty() { 0.0 } else { hits as f64 / pairs.len() as f64 };
            (t, rate)
        })
        .collect()
}

/// Corner boxes for the detection protocol, in scene pixels. Both boxes are
/// built over the ground-truth-visible corner subset so the comparison pairs
/// like with like; predictions at invisible corners are trained toward the
/// masked zero target and would otherwise drag the predicted box toward the
/// crop center.
pub fn detection_boxes(
    ex: &EvalExample,
    half_extent: f64,
    crop_center: Point,
) -> Result<(Box2D, Box2D)> {
    let mut pred_pts: [Option<Point>; CORNER_COUNT] = [None; CORNER_COUNT];
    let mut gt_pts: [Option<Point>; CORNER_COUNT] = [None; CORNER_COUNT];
    for j in 0..CORNER_COUNT {
        if ex.mask[j] {
            pred_pts[j] = Some(Point::new(
                crop_center.x + half_extent * ex.pred[j][0],
                crop_center.y + half_extent * ex.pred[j][1],
            ));
            gt_pts[j] = Some(Point::new(
                crop_center.x + half_extent * ex.target[j][0],
                crop_center.y + half_extent * ex.target[j][1],
            ));
        }
    }
    Ok((corner_box(&pred_pts)?, corner_box(&gt_pts)?))
}

/// Sample-count-weighted mean: `sum(n_t * m_t) / sum(n_t)`. Entries with a
/// zero weight are excluded; an all-zero weight set is rejected.
pub fn weighted_mean(values: &[(f64, usize)]) -> Result<f64> {
    let total: usize = values.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::InvalidInput("weighted mean over all-zero weights".into()));
    }
    let sum: f64 = values.iter().map(|(v, n)| v * *n as f64).sum();
    Ok(sum / total as f64)
}
