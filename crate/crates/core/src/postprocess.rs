//! Raw detector candidates to final detections: confidence thresholding,
//! argmax class assignment and greedy non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::infer::RawDetections;
use crate::types::{iou, ClassId, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub max_detections: usize,
    pub class_agnostic_nms: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.25,
            nms_iou_threshold: 0.45,
            max_detections: 300,
            class_agnostic_nms: false,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("confidence_threshold", self.confidence_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.max_detections == 0 {
            return Err("max_detections must be at least 1".into());
        }
        Ok(())
    }
}

/// Argmax over the per-class scores; lowest class id wins ties. Candidates
/// whose best score is below `conf_thresh` are dropped.
pub fn assign_classes(raw: &RawDetections, conf_thresh: f64) -> Vec<Detection> {
    raw.candidates
        .iter()
        .filter_map(|c| {
            let (best, &score) = c
                .scores
                .iter()
                .enumerate()
                .fold((0, &c.scores[0]), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
            (score >= conf_thresh).then(|| Detection {
                bbox: c.bbox,
                class_id: ClassId::new(best as i64).expect("score vector has one entry per class"),
                confidence: score,
            })
        })
        .collect()
}

/// Descending confidence, then ascending class id. Used with a stable sort
/// so remaining ties keep insertion order.
pub(crate) fn confidence_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy hard NMS. A detection is kept iff its IoU with every previously
/// kept detection (of the same class unless `class_agnostic`) is below
/// `iou_thresh`. Output is in keep order, at most `max_out` long.
pub fn nms(dets: &[Detection], iou_thresh: f64, class_agnostic: bool, max_out: usize) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| confidence_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        if kept.len() >= max_out {
            break;
        }
        let suppressed = kept.iter().any(|k| {
            (class_agnostic || k.class_id == d.class_id) && iou(&k.bbox, &d.bbox) >= iou_thresh
        });
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

/// Full decode: threshold, assign classes, suppress.
pub fn postprocess(raw: &RawDetections, cfg: &PostprocessConfig) -> Vec<Detection> {
    let dets = assign_classes(raw, cfg.confidence_threshold);
    nms(
        &dets,
        cfg.nms_iou_threshold,
        cfg.class_agnostic_nms,
        cfg.max_detections,
    )
}
