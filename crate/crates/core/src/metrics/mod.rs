//! Evaluation metrics: depth error, detection matching, AP/mAP, PR/F1
//! curves and loss diagnostics.

mod ap;
mod depth;
mod detection;
mod loss;

use serde::Serialize;
use thiserror::Error;

use crate::types::{ClassId, Detection, GroundTruthObject, NUM_CLASSES};

pub use ap::{average_precision, mean_ap, pr_f1_curves, pr_points, CurvePoint, PRCurve, ScoredFlag};
pub use depth::{abs_rel, depth_metrics, rmse, sq_rel, DepthAccumulator, DepthMetrics, DepthSamplePair};
pub use detection::{
    f1, match_detections, precision, recall, ClassCounts, ConfusionCounts, ImageMatch, MatchConfig,
    PredictionOutcome, BACKGROUND,
};
pub use loss::{box_loss, cls_loss, combined_loss, one_hot, LossWeights, PROB_EPSILON};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no valid ground-truth pixels")]
    NoValidPixels,
    #[error("no class has ground truth, mAP undefined")]
    NoDefinedClasses,
    #[error("estimate is {estimate:?} but truth is {truth:?}")]
    DimensionMismatch {
        estimate: (u32, u32),
        truth: (u32, u32),
    },
}

/// Number of thresholds in the default PR/F1 sweep.
pub const DEFAULT_CURVE_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub iou_threshold: f64,
    /// AP per class id; `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub curve: PRCurve,
    pub n_images: usize,
    pub n_predictions: usize,
    pub n_truth: usize,
}

/// Accumulates matches image by image.
#[derive(Debug, Clone)]
pub struct DetectionEvaluator {
    cfg: MatchConfig,
    flags: Vec<Vec<ScoredFlag>>,
    n_truth: [usize; NUM_CLASSES],
    counts: ConfusionCounts,
    n_images: usize,
}

impl DetectionEvaluator {
    pub fn new(cfg: MatchConfig) -> Self {
        Self {
            cfg,
            flags: vec![Vec::new(); NUM_CLASSES],
            n_truth: [0; NUM_CLASSES],
            counts: ConfusionCounts::default(),
            n_images: 0,
        }
    }

    pub fn add_image(&mut self, preds: &[Detection], truth: &[GroundTruthObject]) -> ImageMatch {
        let m = match_detections(preds, truth, &self.cfg);
        for o in &m.outcomes {
            self.flags[o.class_id.index()].push(ScoredFlag {
                confidence: o.confidence,
                is_tp: o.is_tp,
            });
        }
        for t in truth {
            self.n_truth[t.class_id.index()] += 1;
        }
        self.counts.merge(&m.counts);
        self.n_images += 1;
        m
    }

    pub fn class_flags(&self, class: ClassId) -> &[ScoredFlag] {
        &self.flags[class.index()]
    }

    pub fn class_truth(&self, class: ClassId) -> usize {
        self.n_truth[class.index()]
    }

    pub fn finish(&self, curve_points: usize) -> Result<DetectionMetrics, MetricError> {
        let per_class_ap: Vec<Option<f64>> = ClassId::all()
            .map(|c| average_precision(self.class_flags(c), self.class_truth(c)))
            .collect();
        let map = mean_ap(&per_class_ap)?;
        let total = self.counts.total();
        let all_flags: Vec<ScoredFlag> = self.flags.iter().flatten().copied().collect();
        let n_truth: usize = self.n_truth.iter().sum();
        Ok(DetectionMetrics {
            iou_threshold: self.cfg.iou_threshold,
            per_class_ap,
            map,
            precision: precision(&total),
            recall: recall(&total),
            f1: f1(&total),
            counts: self.counts.clone(),
            curve: pr_f1_curves(&all_flags, n_truth, curve_points),
            n_images: self.n_images,
            n_predictions: all_flags.len(),
            n_truth,
        })
    }
}
