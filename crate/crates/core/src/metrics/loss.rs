//! Detector loss terms, usable as diagnostics on matched predictions.

use serde::{Deserialize, Serialize};

use crate::types::{iou, BBox, ClassId, NUM_CLASSES};

/// Floor applied to predicted probabilities before taking the log.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_box: f64,
    pub lambda_cls: f64,
    pub lambda_dfl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_box: 7.5,
            lambda_cls: 0.5,
            lambda_dfl: 1.5,
        }
    }
}

/// Sum of `1 - IoU` over matched `(predicted, actual)` pairs.
pub fn box_loss(pairs: &[(BBox, BBox)]) -> f64 {
    pairs.iter().map(|(p, t)| 1.0 - iou(p, t)).sum()
}

pub fn one_hot(class: ClassId) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    v[class.index()] = 1.0;
    v
}

/// Cross-entropy `-sum_i sum_c p[i][c] * ln(q[i][c])` between target
/// distributions `p` and predicted probabilities `q`.
pub fn cls_loss(targets: &[[f64; NUM_CLASSES]], probs: &[[f64; NUM_CLASSES]]) -> f64 {
    let mut total = 0.0;
    for (p, q) in targets.iter().zip(probs) {
        for (&pc, &qc) in p.iter().zip(q) {
            if pc != 0.0 {
                total -= pc * qc.clamp(PROB_EPSILON, 1.0).ln();
            }
        }
    }
    total
}

/// `lambda_box * box + lambda_cls * cls + lambda_dfl * dfl`. The DFL term
/// is supplied by the caller (0 if unavailable).
pub fn combined_loss(box_term: f64, cls_term: f64, dfl_term: f64, w: &LossWeights) -> f64 {
    w.lambda_box * box_term + w.lambda_cls * cls_term + w.lambda_dfl * dfl_term
}
