use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let iw = (self.x1.min(o.x1) - self.x0.max(o.x0)).max(0.0);
        let ih = (self.y1.min(o.y1) - self.y0.max(o.y0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub width: f64,
    pub height: f64,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(width: f64, height: f64, detections: Vec<Detection>) -> Result<Self> {
        for d in &detections {
            let b = d.bbox;
            if !(0.0 <= b.x0 && b.x0 <= b.x1 && b.x1 <= width && 0.0 <= b.y0 && b.y0 <= b.y1 && b.y1 <= height) {
                return Err(Error::geometry(format!("box {b:?} outside {width}x{height} image")));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(Error::Domain(format!("confidence {} outside [0, 1]", d.confidence)));
            }
        }
        Ok(Self {
            width,
            height,
            detections,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionComparison {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `(IoU threshold, AP averaged over reference classes)`
    pub ap: Vec<(f64, f64)>,
    pub map: f64,
}

/// IoU threshold for precision/recall/F1.
pub const MATCH_IOU: f64 = 0.5;

fn by_confidence(dets: &[&Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    idx
}

/// Greedy confidence-ordered matching of one class; returns a TP flag per
/// prediction in confidence order.
fn match_class(pred: &[&Detection], reference: &[&Detection], thr: f64) -> Vec<bool> {
    let mut used = vec![false; reference.len()];
    by_confidence(pred)
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (j, r) in reference.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let iou = pred[i].bbox.iou(&r.bbox);
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    used[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated average precision.
fn average_precision(tp: &[bool], n_ref: usize) -> f64 {
    if n_ref == 0 {
        return if tp.is_empty() { 1.0 } else { 0.0 };
    }
    let mut prec = Vec::with_capacity(tp.len());
    let mut rec = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        prec.push(hits as f64 / (i + 1) as f64);
        rec.push(hits as f64 / n_ref as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_r = 0.0;
    for (p, r) in prec.iter().zip(&rec) {
        ap += (r - last_r) * p;
        last_r = *r;
    }
    ap
}

fn of(set: &DetectionSet, c: u32) -> Vec<&Detection> {
    set.detections.iter().filter(|d| d.class == c).collect()
}

/// Compares generated-image detections (`pred`) against original-image
/// detections (`reference`).
pub fn detection_compare(pred: &DetectionSet, reference: &DetectionSet, iou_thresholds: &[f64]) -> Result<DetectionComparison> {
    if pred.width != reference.width || pred.height != reference.height {
        return Err(Error::geometry("detection sets cover different image sizes"));
    }
    let classes: BTreeSet<u32> = pred.detections.iter().chain(&reference.detections).map(|d| d.class).collect();
    let mut tp = 0usize;
    for &c in &classes {
        tp += match_class(&of(pred, c), &of(reference, c), MATCH_IOU).iter().filter(|&&t| t).count();
    }
    let (np, nr) = (pred.detections.len(), reference.detections.len());
    let precision = if np == 0 { if nr == 0 { 1.0 } else { 0.0 } } else { tp as f64 / np as f64 };
    let recall = if nr == 0 { if np == 0 { 1.0 } else { 0.0 } } else { tp as f64 / nr as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let ref_classes: BTreeSet<u32> = reference.detections.iter().map(|d| d.class).collect();
    let ap: Vec<(f64, f64)> = iou_thresholds
        .iter()
        .map(|&thr| {
            let v = if ref_classes.is_empty() {
                if np == 0 { 1.0 } else { 0.0 }
            } else {
                ref_classes
                    .iter()
                    .map(|&c| {
                        let r = of(reference, c);
                        average_precision(&match_class(&of(pred, c), &r, thr), r.len())
                    })
                    .sum::<f64>()
                    / ref_classes.len() as f64
            };
            (thr, v)
        })
        .collect();
    let map = if ap.is_empty() {
        0.0
    } else {
        ap.iter().map(|a| a.1).sum::<f64>() / ap.len() as f64
    };
    Ok(DetectionComparison {
        precision,
        recall,
        f1,
        ap,
        map,
    })
}
