//! Depth error metrics over pixels with valid ground truth.
//!
//! Relative errors are normalised by the ground-truth depth and so only use
//! pixels whose truth is strictly positive; RMSE uses every valid pixel.

use serde::Serialize;

use super::MetricError;
use crate::types::DepthMap;

/// An estimate and its ground truth, same dimensions.
#[derive(Debug, Clone, Copy)]
pub struct DepthSamplePair<'a> {
    pub estimate: &'a DepthMap,
    pub truth: &'a DepthMap,
}

impl<'a> DepthSamplePair<'a> {
    pub fn new(estimate: &'a DepthMap, truth: &'a DepthMap) -> Result<Self, MetricError> {
        if (estimate.width(), estimate.height()) != (truth.width(), truth.height()) {
            return Err(MetricError::DimensionMismatch {
                estimate: (estimate.width(), estimate.height()),
                truth: (truth.width(), truth.height()),
            });
        }
        Ok(Self { estimate, truth })
    }

    /// `(estimate, truth)` for every pixel with valid ground truth.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (f64, f64)> + 'a {
        let (est, truth) = (self.estimate, self.truth);
        truth
            .depth()
            .iter()
            .zip(truth.valid())
            .zip(est.depth())
            .filter(|((_, v), _)| **v)
            .map(|((t, _), e)| (*e, *t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// Pixels with valid ground truth (the RMSE population).
    pub n_pixels: u64,
}

/// Running sums, mergeable across images.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DepthAccumulator {
    abs_rel_sum: f64,
    sq_rel_sum: f64,
    sq_sum: f64,
    n: u64,
    n_rel: u64,
}

impl DepthAccumulator {
    pub fn add_pair(&mut self, pair: &DepthSamplePair<'_>) {
        for (e, t) in pair.valid_pixels() {
            let diff = e - t;
            if t > 0.0 {
                self.abs_rel_sum += diff.abs() / t;
                self.sq_rel_sum += diff * diff / t;
                self.n_rel += 1;
            }
            self.sq_sum += diff * diff;
            self.n += 1;
        }
    }

    pub fn merge(&mut self, other: &DepthAccumulator) {
        self.abs_rel_sum += other.abs_rel_sum;
        self.sq_rel_sum += other.sq_rel_sum;
        self.sq_sum += other.sq_sum;
        self.n += other.n;
        self.n_rel += other.n_rel;
    }

    pub fn rmse(&self) -> Result<f64, MetricError> {
        if self.n == 0 {
            return Err(MetricError::NoValidPixels);
        }
        Ok((self.sq_sum / self.n as f64).sqrt())
    }

    /// All three metrics; fails unless some pixel has positive truth.
    pub fn finish(&self) -> Result<DepthMetrics, MetricError> {
        if self.n_rel == 0 {
            return Err(MetricError::NoValidPixels);
        }
        let n_rel = self.n_rel as f64;
        Ok(DepthMetrics {
            abs_rel: self.abs_rel_sum / n_rel,
            sq_rel: self.sq_rel_sum / n_rel,
            rmse: self.rmse()?,
            n_pixels: self.n,
        })
    }
}

pub fn depth_metrics(pair: &DepthSamplePair<'_>) -> Result<DepthMetrics, MetricError> {
    let mut acc = DepthAccumulator::default();
    acc.add_pair(pair);
    acc.finish()
}

/// Mean of `|estimate - truth| / truth`.
pub fn abs_rel(pair: &DepthSamplePair<'_>) -> Result<f64, MetricError> {
    depth_metrics(pair).map(|m| m.abs_rel)
}

/// Mean of `(estimate - truth)^2 / truth`.
pub fn sq_rel(pair: &DepthSamplePair<'_>) -> Result<f64, MetricError> {
    depth_metrics(pair).map(|m| m.sq_rel)
}

/// Root mean squared error in meters.
pub fn rmse(pair: &DepthSamplePair<'_>) -> Result<f64, MetricError> {
    let mut acc = DepthAccumulator::default();
    acc.add_pair(pair);
    acc.rmse()
}
