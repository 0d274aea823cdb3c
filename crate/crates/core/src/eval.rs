//! Single-class detection metrics: precision, recall and mAP50.
//!
//! Predictions are matched greedily per image in descending confidence. The
//! matches of all images are pooled into one precision/recall curve with one
//! point per distinct confidence. AP is the exact area under the monotone
//! precision envelope of that curve (all-point interpolation). Precision and
//! recall are reported at the confidence that maximizes F1 unless a fixed
//! confidence is requested.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{iou, BBox};
use crate::yolo::{self, Confidence};

pub const SCHEMA_VERSION: u32 = 1;

/// TP/FP flag for each prediction, in the input order. Predictions are
/// visited in descending confidence (stable for ties); each claims the
/// unmatched ground truth with the highest IoU `>= iou_thr`, lowest index on
/// ties.
pub fn match_detections(preds: &[BBox], gts: &[BBox], iou_thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score().total_cmp(&preds[a].score()));
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; preds.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[p], gt);
            if v >= iou_thr && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            flags[p] = true;
        }
    }
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub conf: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Cumulative curve over `(confidence, is_tp)` pairs, one point per distinct
/// confidence, highest first.
pub fn pr_curve(scored: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(conf, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if sorted.get(i + 1).map_or(true, |next| next.0 != conf) {
            points.push(point(conf, tp, fp, n_gt));
        }
    }
    points
}

fn point(conf: f64, tp: usize, fp: usize, n_gt: usize) -> PrPoint {
    PrPoint {
        conf,
        recall: ratio(tp, n_gt),
        precision: ratio(tp, tp + fp),
        tp,
        fp,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the monotone precision envelope; 0 without ground truth.
pub fn area_under_envelope(points: &[PrPoint], n_gt: usize) -> f64 {
    if n_gt == 0 || points.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// AP of a confidence-ordered TP/FP flag list, each flag its own threshold.
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    let n = flags.len();
    let scored: Vec<(f64, bool)> = flags
        .iter()
        .enumerate()
        .map(|(i, &hit)| ((n - i) as f64, hit))
        .collect();
    area_under_envelope(&pr_curve(&scored, n_gt), n_gt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub iou_thr: f64,
    /// Confidence threshold of the reported precision/recall; `None` when
    /// there are no predictions.
    pub op_conf: Option<f64>,
    pub counts: Counts,
    pub images: usize,
    pub pr_curve: Vec<PrPoint>,
}

/// Which confidence threshold precision and recall are reported at.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum OperatingPoint {
    #[default]
    MaxF1,
    Fixed(f64),
}

fn f1(p: &PrPoint) -> f64 {
    if p.precision + p.recall == 0.0 {
        0.0
    } else {
        2.0 * p.precision * p.recall / (p.precision + p.recall)
    }
}

/// Pool per-image `(predictions, ground truth)` pairs into a report.
pub fn evaluate_pairs(
    images: &[(Vec<BBox>, Vec<BBox>)],
    iou_thr: f64,
    op: OperatingPoint,
) -> EvalReport {
    let mut scored = Vec::new();
    let mut n_gt = 0;
    for (preds, gts) in images {
        n_gt += gts.len();
        let flags = match_detections(preds, gts, iou_thr);
        scored.extend(preds.iter().zip(flags).map(|(p, f)| (p.score(), f)));
    }
    let curve = pr_curve(&scored, n_gt);
    let map50 = area_under_envelope(&curve, n_gt);

    let chosen = match op {
        OperatingPoint::MaxF1 => {
            // first (highest-confidence) point wins ties
            let mut best: Option<&PrPoint> = None;
            for p in &curve {
                if best.map_or(true, |b| f1(p) > f1(b)) {
                    best = Some(p);
                }
            }
            best.copied()
        }
        OperatingPoint::Fixed(c) => {
            let (tp, fp) = scored
                .iter()
                .filter(|s| s.0 >= c)
                .fold(
                    (0, 0),
                    |(tp, fp), s| {
                        if s.1 {
                            (tp + 1, fp)
                        } else {
                            (tp, fp + 1)
                        }
                    },
                );
            Some(point(c, tp, fp, n_gt))
        }
    };
    let (precision, recall, op_conf, tp, fp) = match chosen {
        Some(p) => (p.precision, p.recall, Some(p.conf), p.tp, p.fp),
        None => (0.0, 0.0, None, 0, 0),
    };
    EvalReport {
        schema_version: SCHEMA_VERSION,
        precision,
        recall,
        map50,
        iou_thr,
        op_conf,
        counts: Counts {
            tp,
            fp,
            fn_: n_gt - tp,
        },
        images: images.len(),
        pr_curve: curve,
    }
}

/// Evaluate a prediction directory against a ground-truth directory, both in
/// YOLO layout (a root with `labels/`, or the labels directory itself).
/// Ground-truth images without a prediction file count as having no
/// predictions; prediction files without ground truth count as images with
/// no objects.
pub fn evaluate(
    pred_root: &Path,
    gt_root: &Path,
    iou_thr: f64,
    op: OperatingPoint,
) -> Result<EvalReport> {
    let gts = yolo::read_label_dir(gt_root, Confidence::Optional)?;
    let pred_dir = yolo::labels_dir(pred_root);
    let mut preds = if pred_dir.is_dir() {
        yolo::read_label_dir(pred_root, Confidence::Required)?
    } else {
        Default::default()
    };
    let mut pairs = Vec::with_capacity(gts.len());
    for (name, gt) in &gts {
        pairs.push((preds.remove(name).unwrap_or_default(), gt.clone()));
    }
    pairs.extend(preds.into_values().map(|p| (p, Vec::new())));
    Ok(evaluate_pairs(&pairs, iou_thr, op))
}
