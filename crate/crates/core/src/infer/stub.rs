//! Deterministic backends for tests, demos and benchmarking without models.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DepthBackend, DetectBackend, ImageTensor, InferError, PreprocessSpec, RawCandidate, RawDepth,
    RawDetections,
};
use crate::types::{BBox, ClassId, NUM_CLASSES};

/// Depth as an affine function of luma: `base + gain * luma`.
pub struct StubDepthBackend {
    spec: PreprocessSpec,
    base: f64,
    gain: f64,
}

impl StubDepthBackend {
    pub fn new(spec: PreprocessSpec, base: f64, gain: f64) -> Self {
        Self { spec, base, gain }
    }
}

/// Rec. 601 luma with integer weights so that white maps to exactly 1.
fn luma([r, g, b]: [f32; 3]) -> f64 {
    (299.0 * r as f64 + 587.0 * g as f64 + 114.0 * b as f64) / 1000.0
}

impl DepthBackend for StubDepthBackend {
    fn input_spec(&self) -> PreprocessSpec {
        self.spec
    }

    fn estimate(&mut self, image: &ImageTensor) -> Result<RawDepth, InferError> {
        let mut values = Vec::with_capacity(image.width as usize * image.height as usize);
        for y in 0..image.height {
            for x in 0..image.width {
                values.push((self.base + self.gain * luma(image.rgb(x, y))) as f32);
            }
        }
        Ok(RawDepth {
            width: image.width,
            height: image.height,
            values,
        })
    }
}

/// One planted candidate. Either `class_id` + `score` or a full `scores`
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureBox {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl FixtureBox {
    pub fn single(bbox: [f64; 4], class_id: ClassId, score: f64) -> Self {
        Self {
            bbox,
            class_id: Some(class_id),
            score: Some(score),
            scores: None,
        }
    }

    fn to_candidate(&self) -> Result<RawCandidate, String> {
        let [x0, y0, x1, y1] = self.bbox;
        let bbox = BBox::new(x0, y0, x1, y1).map_err(|e| e.to_string())?;
        let mut scores = [0.0; NUM_CLASSES];
        match (&self.scores, self.class_id, self.score) {
            (Some(v), None, None) if v.len() == NUM_CLASSES => scores.copy_from_slice(v),
            (None, Some(c), Some(s)) => scores[c.index()] = s,
            _ => return Err("need either class_id+score or 13 scores".into()),
        }
        Ok(RawCandidate { bbox, scores })
    }
}

/// Scripted detector output, keyed by frame id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectFixture {
    pub frames: BTreeMap<u64, Vec<FixtureBox>>,
}

impl DetectFixture {
    pub fn load(path: &Path) -> Result<Self, InferError> {
        let bad = |message: String| InferError::BadFixture {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let fixture: Self = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        fixture.validate().map_err(bad)?;
        Ok(fixture)
    }

    fn validate(&self) -> Result<(), String> {
        for (id, boxes) in &self.frames {
            for b in boxes {
                b.to_candidate().map_err(|e| format!("frame {id}: {e}"))?;
            }
        }
        Ok(())
    }
}

/// Echoes planted candidates for each frame; NMS happens downstream.
pub struct StubDetectBackend {
    spec: PreprocessSpec,
    fixture: DetectFixture,
    permissive: bool,
}

impl StubDetectBackend {
    pub fn new(spec: PreprocessSpec, fixture: DetectFixture, permissive: bool) -> Self {
        Self {
            spec,
            fixture,
            permissive,
        }
    }
}

impl DetectBackend for StubDetectBackend {
    fn input_spec(&self) -> PreprocessSpec {
        self.spec
    }

    fn detect(&mut self, frame_id: u64, _image: &ImageTensor) -> Result<RawDetections, InferError> {
        match self.fixture.frames.get(&frame_id) {
            Some(boxes) => Ok(RawDetections {
                candidates: boxes
                    .iter()
                    .map(|b| b.to_candidate().map_err(InferError::Runtime))
                    .collect::<Result<_, _>>()?,
            }),
            None if self.permissive => Ok(RawDetections::default()),
            None => Err(InferError::MissingFixtureEntry(frame_id)),
        }
    }
}
