//! Depth/detection fusion: aggregate the depth under each detected box and
//! flag the ones closer than the proximity threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BBox, DepthMap, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthStatistic {
    #[default]
    Median,
    Mean,
    /// 10th percentile (nearest rank): the nearer part of the object.
    P10,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub proximity_threshold_m: f64,
    pub depth_statistic: DepthStatistic,
    pub min_valid_fraction: f64,
    /// Fraction of the box trimmed from each side before sampling.
    pub box_shrink: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            proximity_threshold_m: 3.0,
            depth_statistic: DepthStatistic::Median,
            min_valid_fraction: 0.2,
            box_shrink: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.proximity_threshold_m > 0.0) {
            return Err("proximity_threshold_m must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err("min_valid_fraction outside [0, 1]".into());
        }
        if !(0.0..0.5).contains(&self.box_shrink) {
            return Err("box_shrink must be in [0, 0.5)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("box does not overlap the {width}x{height} depth map")]
    BoxOutsideImage { width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProximityHit {
    pub detection: Detection,
    pub depth_m: f64,
    pub is_close: bool,
    pub valid_fraction: f64,
}

/// Result of fusing one frame. Hits keep input order; out-of-frame boxes
/// are counted rather than reported.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionOutcome {
    pub hits: Vec<ProximityHit>,
    pub skipped_boxes: usize,
    pub low_validity: usize,
}

fn statistic(values: &mut [f64], stat: DepthStatistic) -> f64 {
    debug_assert!(!values.is_empty());
    match stat {
        DepthStatistic::Mean => {
            // incremental mean is exact for constant input
            let mut m = 0.0;
            for (k, v) in values.iter().enumerate() {
                m += (v - m) / (k + 1) as f64;
            }
            m
        }
        DepthStatistic::Median => {
            values.sort_by(f64::total_cmp);
            let n = values.len();
            if n % 2 == 1 {
                values[n / 2]
            } else {
                let (a, b) = (values[n / 2 - 1], values[n / 2]);
                a + (b - a) / 2.0
            }
        }
        DepthStatistic::P10 => {
            values.sort_by(f64::total_cmp);
            let rank = ((0.1 * values.len() as f64).ceil() as usize).max(1);
            values[rank - 1]
        }
    }
}

/// Pixel index range `[lo, hi)` whose centres fall inside `[min, max)`,
/// clipped to `[0, len)`.
fn pixel_span(min: f64, max: f64, len: u32) -> (u32, u32) {
    let lo = (min - 0.5).ceil().max(0.0);
    let hi = (max - 0.5).ceil().clamp(0.0, len as f64);
    (lo.min(hi) as u32, hi as u32)
}

/// Aggregated depth under `bbox` and the fraction of sampled pixels that
/// were valid. No valid pixel gives `(inf, 0)`.
pub fn box_depth(depth: &DepthMap, bbox: &BBox, cfg: &FusionConfig) -> Result<(f64, f64), FusionError> {
    let (w, h) = (depth.width(), depth.height());
    let frame = BBox {
        x_min: 0.0,
        y_min: 0.0,
        x_max: w as f64,
        y_max: h as f64,
    };
    if bbox.intersection(&frame).is_none() {
        return Err(FusionError::BoxOutsideImage {
            width: w,
            height: h,
        });
    }
    let (dx, dy) = (bbox.width() * cfg.box_shrink, bbox.height() * cfg.box_shrink);
    let (x0, x1) = pixel_span(bbox.x_min + dx, bbox.x_max - dx, w);
    let (y0, y1) = pixel_span(bbox.y_min + dy, bbox.y_max - dy, h);
    let total = (x1 - x0) as usize * (y1 - y0) as usize;
    let mut samples = Vec::with_capacity(total);
    for y in y0..y1 {
        for x in x0..x1 {
            if let Some(d) = depth.at(x, y) {
                samples.push(d);
            }
        }
    }
    if samples.is_empty() {
        return Ok((f64::INFINITY, 0.0));
    }
    let fraction = samples.len() as f64 / total as f64;
    Ok((statistic(&mut samples, cfg.depth_statistic), fraction))
}

/// Annotates every detection with its depth and closeness.
pub fn fuse(depth: &DepthMap, dets: &[Detection], cfg: &FusionConfig) -> FusionOutcome {
    let mut out = FusionOutcome::default();
    for d in dets {
        match box_depth(depth, &d.bbox, cfg) {
            Ok((depth_m, valid_fraction)) => {
                let enough = valid_fraction >= cfg.min_valid_fraction;
                if !enough {
                    out.low_validity += 1;
                }
                out.hits.push(ProximityHit {
                    detection: *d,
                    depth_m,
                    is_close: enough && depth_m <= cfg.proximity_threshold_m,
                    valid_fraction,
                });
            }
            Err(FusionError::BoxOutsideImage { .. }) => out.skipped_boxes += 1,
        }
    }
    out
}
