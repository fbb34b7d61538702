//! Shared domain vocabulary: frames, boxes, detections, depth maps and the
//! road-user class taxonomy.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of object categories the detector distinguishes.
pub const NUM_CLASSES: usize = 13;

/// Default category names, in class-id order.
pub const DEFAULT_CLASS_NAMES: [&str; NUM_CLASSES] = [
    "person",
    "rickshaw",
    "rickshaw van",
    "auto rickshaw",
    "truck",
    "pickup truck",
    "private car",
    "motorcycle",
    "bicycle",
    "bus",
    "micro bus",
    "covered van",
    "human hauler",
];

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("class id {0} outside [0, {max}]", max = NUM_CLASSES - 1)]
    BadClassId(i64),
    #[error("unknown class name {0:?}")]
    UnknownClassName(String),
    #[error("class list must name exactly {NUM_CLASSES} classes, found {0}")]
    ClassListLength(usize),
    #[error("class list names {0:?} twice")]
    DuplicateClassName(String),
    #[error("invalid box ({0}, {1}, {2}, {3})")]
    InvalidBox(f64, f64, f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("buffer length {actual} does not match {width}x{height} (expected {expected})")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("negative depth {depth} at valid pixel {index}")]
    NegativeDepth { index: usize, depth: f64 },
    #[error("io error reading class list: {0}")]
    Io(String),
}

/// Where a frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Replay,
    Camera,
    Synthetic,
}

/// A timestamped RGB image flowing through the pipeline.
///
/// The pixel buffer is reference counted so a frame can be handed to both
/// inference branches without copying.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u64,
    pub timestamp_ns: u64,
    pub width: u32,
    pub height: u32,
    pixels: Arc<[u8]>,
    pub source: SourceKind,
}

impl Frame {
    pub fn new(
        id: u64,
        timestamp_ns: u64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        source: SourceKind,
    ) -> Result<Self, TypeError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(TypeError::BufferSize {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            id,
            timestamp_ns,
            width,
            height,
            pixels: pixels.into(),
            source,
        })
    }

    /// Row-major interleaved RGB bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Axis-aligned box in corner form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, TypeError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(TypeError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from centre/extent form.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, TypeError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        box_area(self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self {
            x_min: self.x_min * sx,
            y_min: self.y_min * sy,
            x_max: self.x_max * sx,
            y_max: self.y_max * sy,
        }
    }

    /// Clamps the box into `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        Self {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    /// Intersection, or `None` when the boxes do not overlap with positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_max > x_min && y_max > y_min).then_some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

/// `(x_max - x_min) * (y_max - y_min)`.
pub fn box_area(b: &BBox) -> f64 {
    (b.x_max - b.x_min) * (b.y_max - b.y_min)
}

/// Intersection over union. Two degenerate boxes have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = box_area(a) + box_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Index into the fixed 13-way taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct ClassId(u8);

impl ClassId {
    pub fn new(id: i64) -> Result<Self, TypeError> {
        if (0..NUM_CLASSES as i64).contains(&id) {
            Ok(Self(id as u8))
        } else {
            Err(TypeError::BadClassId(id))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (0..NUM_CLASSES as u8).map(ClassId)
    }
}

impl TryFrom<i64> for ClassId {
    type Error = TypeError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ClassId> for u8 {
    fn from(c: ClassId) -> u8 {
        c.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bijection between class ids and names. Line `i` of a class-list file
/// names class `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassList {
    names: Vec<String>,
}

impl Default for ClassList {
    fn default() -> Self {
        Self {
            names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ClassList {
    pub fn parse(text: &str) -> Result<Self, TypeError> {
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if names.len() != NUM_CLASSES {
            return Err(TypeError::ClassListLength(names.len()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(TypeError::DuplicateClassName(n.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn load(path: &Path) -> Result<Self, TypeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TypeError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.index()]
    }

    pub fn id(&self, name: &str) -> Result<ClassId, TypeError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| ClassId(i as u8))
            .ok_or_else(|| TypeError::UnknownClassName(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Serialises back to the one-name-per-line file format.
    pub fn to_file_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }
}

/// A final, post-NMS detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: ClassId,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: ClassId, confidence: f64) -> Result<Self, TypeError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(TypeError::BadConfidence(confidence));
        }
        Ok(Self {
            bbox,
            class_id,
            confidence,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub bbox: BBox,
    pub class_id: ClassId,
}

/// Per-pixel metric depth with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self, TypeError> {
        let expected = width as usize * height as usize;
        for len in [depth.len(), valid.len()] {
            if len != expected {
                return Err(TypeError::BufferSize {
                    width,
                    height,
                    expected,
                    actual: len,
                });
            }
        }
        if let Some((index, &d)) = depth
            .iter()
            .enumerate()
            .find(|&(i, d)| valid[i] && !(*d >= 0.0))
        {
            return Err(TypeError::NegativeDepth { index, depth: d });
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// A map where every pixel is valid.
    pub fn dense(width: u32, height: u32, depth: Vec<f64>) -> Result<Self, TypeError> {
        let valid = vec![true; depth.len()];
        Self::new(width, height, depth, valid)
    }

    pub fn uniform(width: u32, height: u32, value: f64) -> Result<Self, TypeError> {
        Self::dense(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, x: u32, y: u32) -> Option<f64> {
        let i = y as usize * self.width as usize + x as usize;
        self.valid[i].then(|| self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}
