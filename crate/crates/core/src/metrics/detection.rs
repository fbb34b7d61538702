//! Prediction/ground-truth matching, TP/FP/FN counting and the confusion
//! matrix.

use serde::{Deserialize, Serialize};

use crate::types::{iou, ClassId, Detection, GroundTruthObject, NUM_CLASSES};

/// Index of the background row/column in the confusion matrix.
pub const BACKGROUND: usize = NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `tp / (tp + fp)`, 0 when nothing was predicted.
pub fn precision(c: &ClassCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

/// `tp / (tp + fn)`, 0 when there is no ground truth.
pub fn recall(c: &ClassCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(c: &ClassCounts) -> f64 {
    // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// Per-class counts plus a `(13 + 1) x (13 + 1)` confusion matrix indexed
/// `[true class][predicted class]`, background last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub per_class: [ClassCounts; NUM_CLASSES],
    pub matrix: [[u64; NUM_CLASSES + 1]; NUM_CLASSES + 1],
}

impl Default for ConfusionCounts {
    fn default() -> Self {
        Self {
            per_class: [ClassCounts::default(); NUM_CLASSES],
            matrix: [[0; NUM_CLASSES + 1]; NUM_CLASSES + 1],
        }
    }
}

impl ConfusionCounts {
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(b);
        }
        for (ra, rb) in self.matrix.iter_mut().zip(&other.matrix) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> ClassCounts {
        let mut t = ClassCounts::default();
        for c in &self.per_class {
            t.add(c);
        }
        t
    }
}

/// Outcome for one prediction, reported in input order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionOutcome {
    pub class_id: ClassId,
    pub confidence: f64,
    pub is_tp: bool,
    /// Index of the matched ground truth when `is_tp`.
    pub matched_truth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    pub outcomes: Vec<PredictionOutcome>,
    pub counts: ConfusionCounts,
}

/// Indices of `preds` by descending confidence, stable for ties.
pub(crate) fn rank_by_confidence(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

/// Best unclaimed truth for `pred` among those accepted by `eligible`:
/// highest IoU at or above the threshold, lowest index on ties.
fn best_truth(
    pred: &Detection,
    truth: &[GroundTruthObject],
    claimed: &[bool],
    threshold: f64,
    eligible: impl Fn(&GroundTruthObject) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, t) in truth.iter().enumerate() {
        if claimed[j] || !eligible(t) {
            continue;
        }
        let v = iou(&pred.bbox, &t.bbox);
        if v >= threshold && best.map_or(true, |(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Greedy one-to-one matching in descending confidence order.
///
/// A prediction is a true positive if it claims an unclaimed same-class
/// truth with IoU at or above the threshold. For the confusion matrix each
/// false positive is then credited against the best unclaimed truth of
/// another class, or against background.
pub fn match_detections(preds: &[Detection], truth: &[GroundTruthObject], cfg: &MatchConfig) -> ImageMatch {
    let thr = cfg.iou_threshold;
    let order = rank_by_confidence(preds);
    let mut claimed = vec![false; truth.len()];
    let mut matched: Vec<Option<usize>> = vec![None; preds.len()];
    for &i in &order {
        let p = &preds[i];
        if let Some(j) = best_truth(p, truth, &claimed, thr, |t| t.class_id == p.class_id) {
            claimed[j] = true;
            matched[i] = Some(j);
        }
    }

    let mut counts = ConfusionCounts::default();
    for &i in &order {
        let p = &preds[i];
        let pc = p.class_id.index();
        match matched[i] {
            Some(_) => {
                counts.per_class[pc].tp += 1;
                counts.matrix[pc][pc] += 1;
            }
            None => {
                counts.per_class[pc].fp += 1;
                match best_truth(p, truth, &claimed, thr, |t| t.class_id != p.class_id) {
                    Some(j) => {
                        claimed[j] = true;
                        counts.matrix[truth[j].class_id.index()][pc] += 1;
                    }
                    None => counts.matrix[BACKGROUND][pc] += 1,
                }
            }
        }
    }
    let matched_truth: Vec<bool> = {
        let mut m = vec![false; truth.len()];
        matched.iter().flatten().for_each(|&j| m[j] = true);
        m
    };
    for (j, t) in truth.iter().enumerate() {
        let tc = t.class_id.index();
        if !matched_truth[j] {
            counts.per_class[tc].fn_ += 1;
            if !claimed[j] {
                counts.matrix[tc][BACKGROUND] += 1;
            }
        }
    }

    let outcomes = preds
        .iter()
        .zip(&matched)
        .map(|(p, m)| PredictionOutcome {
            class_id: p.class_id,
            confidence: p.confidence,
            is_tp: m.is_some(),
            matched_truth: *m,
        })
        .collect();
    ImageMatch { outcomes, counts }
}
