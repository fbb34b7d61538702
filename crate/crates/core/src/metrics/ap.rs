//! Average precision and confidence-swept PR/F1 curves.

use serde::Serialize;

use super::MetricError;

/// A prediction's confidence and whether it matched ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredFlag {
    pub confidence: f64,
    pub is_tp: bool,
}

/// `(recall, precision)` at each distinct confidence level, from the
/// highest confidence down. Predictions sharing a confidence enter together,
/// so the result does not depend on input order.
pub fn pr_points(flags: &[ScoredFlag], n_truth: usize) -> Vec<(f64, f64)> {
    let mut sorted = flags.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let level = sorted[i].confidence;
        while i < sorted.len() && sorted[i].confidence == level {
            tp += sorted[i].is_tp as u64;
            seen += 1;
            i += 1;
        }
        let recall = if n_truth == 0 { 0.0 } else { tp as f64 / n_truth as f64 };
        points.push((recall, tp as f64 / seen as f64));
    }
    points
}

/// All-point interpolated AP: area under the precision envelope, where the
/// envelope at recall `r` is the best precision at any recall `>= r`.
/// `None` when the class has no ground truth.
pub fn average_precision(flags: &[ScoredFlag], n_truth: usize) -> Option<f64> {
    if n_truth == 0 {
        return None;
    }
    let points = pr_points(flags, n_truth);
    // suffix maxima of precision
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for ((recall, _), env) in points.iter().zip(&envelope) {
        ap += (recall - prev_recall) * env;
        prev_recall = *recall;
    }
    Some(ap)
}

/// Mean over classes with a defined AP.
pub fn mean_ap(per_class: &[Option<f64>]) -> Result<f64, MetricError> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricError::NoDefinedClasses);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PRCurve {
    pub points: Vec<CurvePoint>,
}

impl PRCurve {
    pub fn f1_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|p| (p.threshold, p.f1))
    }

    /// Plain-text columns for plotting.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("threshold\tprecision\trecall\tf1\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:.4}\t{:.6}\t{:.6}\t{:.6}\n",
                p.threshold, p.precision, p.recall, p.f1
            ));
        }
        s
    }
}

/// Sweeps `n_points` evenly spaced thresholds over `[0, 1]`. At threshold
/// `t` only predictions with confidence `>= t` count; with none left,
/// precision and recall are 0.
pub fn pr_f1_curves(flags: &[ScoredFlag], n_truth: usize, n_points: usize) -> PRCurve {
    let mut sorted = flags.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let steps = n_points.max(2) - 1;
    let points = (0..=steps)
        .map(|k| {
            let threshold = k as f64 / steps as f64;
            let kept = sorted.partition_point(|f| f.confidence >= threshold);
            let tp = sorted[..kept].iter().filter(|f| f.is_tp).count();
            let precision = if kept == 0 { 0.0 } else { tp as f64 / kept as f64 };
            let recall = if n_truth == 0 { 0.0 } else { tp as f64 / n_truth as f64 };
            let f1 = if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (kept + n_truth) as f64
            };
            CurvePoint {
                threshold,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    PRCurve { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(v: &[(f64, bool)]) -> Vec<ScoredFlag> {
        v.iter()
            .map(|&(confidence, is_tp)| ScoredFlag { confidence, is_tp })
            .collect()
    }

    #[test]
    fn single_tp_is_perfect() {
        assert_eq!(average_precision(&flags(&[(0.9, true)]), 1), Some(1.0));
    }

    #[test]
    fn tp_fp_tp_ranking() {
        let ap = average_precision(&flags(&[(0.9, true), (0.8, false), (0.7, true)]), 2).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn no_tp_is_zero() {
        assert_eq!(average_precision(&flags(&[(0.9, false), (0.3, false)]), 3), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
    }

    #[test]
    fn no_truth_is_undefined() {
        assert_eq!(average_precision(&flags(&[(0.9, false)]), 0), None);
    }

    #[test]
    fn tied_confidences_enter_together() {
        let a = average_precision(&flags(&[(0.5, true), (0.5, false)]), 1);
        let b = average_precision(&flags(&[(0.5, false), (0.5, true)]), 1);
        assert_eq!(a, b);
        assert_eq!(a, Some(0.5));
    }

    #[test]
    fn map_examples() {
        assert_eq!(mean_ap(&[Some(1.0), Some(0.5)]).unwrap(), 0.75);
        assert_eq!(mean_ap(&[None, Some(0.8)]).unwrap(), 0.8);
        assert_eq!(mean_ap(&[Some(0.0), Some(0.0)]).unwrap(), 0.0);
        assert_eq!(mean_ap(&[None, None]), Err(MetricError::NoDefinedClasses));
    }

    #[test]
    fn all_tp_curve() {
        let c = pr_f1_curves(&flags(&[(0.9, true), (0.9, true)]), 2, 101);
        assert_eq!(c.points.len(), 101);
        for p in &c.points {
            if p.threshold <= 0.9 {
                assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
            } else {
                assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn curve_tsv_has_header_and_rows() {
        let c = pr_f1_curves(&flags(&[(0.5, true)]), 1, 3);
        let tsv = c.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.starts_with("threshold\tprecision\trecall\tf1\n"));
        assert_eq!(c.f1_points().count(), 3);
    }
}
