//! YOLO text labels (`class cx cy w h`, normalised) and the matching
//! prediction files (`class confidence cx cy w h`).

use std::fmt::Write as _;

use thiserror::Error;

use crate::types::{BBox, ClassId, Detection, GroundTruthObject};

/// Slack allowed on normalised coordinates before a value is rejected.
pub const COORD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("line {line}: class id {value:?} outside [0, 12]")]
    BadClassId { line: usize, value: String },
    #[error("line {line}: bad coordinate {value:?}")]
    BadCoordinate { line: usize, value: String },
    #[error("line {line}: bad confidence {value:?}")]
    BadConfidence { line: usize, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    BadFieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
}

fn parse_class(field: &str, line: usize) -> Result<ClassId, LabelError> {
    let bad = || LabelError::BadClassId {
        line,
        value: field.to_string(),
    };
    let id: i64 = field.parse().map_err(|_| bad())?;
    ClassId::new(id).map_err(|_| bad())
}

fn parse_unit(field: &str, line: usize) -> Result<f64, LabelError> {
    let v: f64 = field.parse().map_err(|_| LabelError::BadCoordinate {
        line,
        value: field.to_string(),
    })?;
    if !v.is_finite() || v < -COORD_TOLERANCE || v > 1.0 + COORD_TOLERANCE {
        return Err(LabelError::BadCoordinate {
            line,
            value: field.to_string(),
        });
    }
    Ok(v.clamp(0.0, 1.0))
}

fn denormalize(coords: [f64; 4], width: f64, height: f64) -> BBox {
    let [cx, cy, w, h] = coords;
    let b = BBox {
        x_min: (cx - w / 2.0) * width,
        y_min: (cy - h / 2.0) * height,
        x_max: (cx + w / 2.0) * width,
        y_max: (cy + h / 2.0) * height,
    };
    b.clamp_to(width, height)
}

fn fields(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Parses a label file into corner-form ground-truth boxes, in line order.
pub fn parse_yolo_labels(
    text: &str,
    image_width: u32,
    image_height: u32,
) -> Result<Vec<GroundTruthObject>, LabelError> {
    let (w, h) = (image_width as f64, image_height as f64);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let f = fields(raw);
        if f.is_empty() {
            continue;
        }
        if f.len() != 5 {
            return Err(LabelError::BadFieldCount {
                line,
                expected: 5,
                found: f.len(),
            });
        }
        let class_id = parse_class(f[0], line)?;
        let mut coords = [0.0; 4];
        for (c, s) in coords.iter_mut().zip(&f[1..]) {
            *c = parse_unit(s, line)?;
        }
        out.push(GroundTruthObject {
            bbox: denormalize(coords, w, h),
            class_id,
        });
    }
    Ok(out)
}

/// Parses a prediction file: like a label file with a confidence column
/// after the class id.
pub fn parse_yolo_predictions(
    text: &str,
    image_width: u32,
    image_height: u32,
) -> Result<Vec<Detection>, LabelError> {
    let (w, h) = (image_width as f64, image_height as f64);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let f = fields(raw);
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(LabelError::BadFieldCount {
                line,
                expected: 6,
                found: f.len(),
            });
        }
        let class_id = parse_class(f[0], line)?;
        let confidence = parse_unit(f[1], line).map_err(|_| LabelError::BadConfidence {
            line,
            value: f[1].to_string(),
        })?;
        let mut coords = [0.0; 4];
        for (c, s) in coords.iter_mut().zip(&f[2..]) {
            *c = parse_unit(s, line)?;
        }
        out.push(Detection {
            bbox: denormalize(coords, w, h),
            class_id,
            confidence,
        });
    }
    Ok(out)
}

fn normalized(b: &BBox, width: f64, height: f64) -> [f64; 4] {
    [
        (b.x_min + b.x_max) / 2.0 / width,
        (b.y_min + b.y_max) / 2.0 / height,
        b.width() / width,
        b.height() / height,
    ]
}

pub fn format_yolo_labels(objects: &[GroundTruthObject], image_width: u32, image_height: u32) -> String {
    let (w, h) = (image_width as f64, image_height as f64);
    let mut s = String::new();
    for o in objects {
        let [cx, cy, bw, bh] = normalized(&o.bbox, w, h);
        let _ = writeln!(s, "{} {cx} {cy} {bw} {bh}", o.class_id);
    }
    s
}

pub fn format_yolo_predictions(dets: &[Detection], image_width: u32, image_height: u32) -> String {
    let (w, h) = (image_width as f64, image_height as f64);
    let mut s = String::new();
    for d in dets {
        let [cx, cy, bw, bh] = normalized(&d.bbox, w, h);
        let _ = writeln!(s, "{} {} {cx} {cy} {bw} {bh}", d.class_id, d.confidence);
    }
    s
}
