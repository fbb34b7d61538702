//! Model backends behind a uniform interface.
//!
//! [`DepthBackend`] and [`DetectBackend`] are what a model adapter
//! implements. The pipeline never calls them directly; it goes through
//! [`DepthEstimator`] and [`Detector`], which enforce the output contracts
//! (non-negative, fully valid depth; scores in `[0, 1]`; boxes inside the
//! image) no matter what the adapter returns.

mod onnx;
mod preprocess;
mod stub;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BBox, DepthMap, NUM_CLASSES};

pub use onnx::{OnnxDepthBackend, OnnxDetectBackend};
pub use preprocess::{preprocess, ImageTensor, Layout, PreprocessSpec};
pub use stub::{DetectFixture, FixtureBox, StubDepthBackend, StubDetectBackend};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("frame has zero width or height")]
    ZeroSizedFrame,
    #[error("preprocess target has zero width or height")]
    ZeroSizedTarget,
    #[error("no fixture entry for frame {0}")]
    MissingFixtureEntry(u64),
    #[error("bad detection fixture {path}: {message}")]
    BadFixture { path: PathBuf, message: String },
    #[error("failed to load model {path}: {message}")]
    ModelLoadFailure { path: PathBuf, message: String },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("model runtime not compiled in (rebuild with --features onnx)")]
    RuntimeUnavailable,
    #[error("inference failed: {0}")]
    Runtime(String),
    #[error("backend config: {0}")]
    Config(String),
}

/// Unconstrained depth output of a backend, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDepth {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

/// One detector candidate before thresholding and NMS.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCandidate {
    pub bbox: BBox,
    /// Independent per-class scores.
    pub scores: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDetections {
    pub candidates: Vec<RawCandidate>,
}

pub trait DepthBackend: Send {
    /// Input resolution the model expects.
    fn input_spec(&self) -> PreprocessSpec;
    fn estimate(&mut self, image: &ImageTensor) -> Result<RawDepth, InferError>;
}

pub trait DetectBackend: Send {
    fn input_spec(&self) -> PreprocessSpec;
    /// `frame_id` lets scripted backends key their output; real models ignore it.
    fn detect(&mut self, frame_id: u64, image: &ImageTensor) -> Result<RawDetections, InferError>;
}

/// Wraps any depth backend and guarantees a non-negative, fully valid map.
pub struct DepthEstimator {
    backend: Box<dyn DepthBackend>,
}

impl DepthEstimator {
    pub fn new(backend: Box<dyn DepthBackend>) -> Self {
        Self { backend }
    }

    pub fn input_spec(&self) -> PreprocessSpec {
        self.backend.input_spec()
    }

    pub fn estimate(&mut self, image: &ImageTensor) -> Result<DepthMap, InferError> {
        let raw = self.backend.estimate(image)?;
        let expected = raw.width as usize * raw.height as usize;
        if raw.values.len() != expected {
            return Err(InferError::ShapeMismatch {
                expected: format!("{}x{} depth values", raw.width, raw.height),
                actual: raw.values.len().to_string(),
            });
        }
        // NaN.max(0.0) is 0.0
        let depth = raw.values.iter().map(|&v| (v as f64).max(0.0)).collect();
        DepthMap::dense(raw.width, raw.height, depth).map_err(|e| InferError::Runtime(e.to_string()))
    }
}

/// Wraps any detect backend, clamping boxes to the input image and scores
/// to `[0, 1]`.
pub struct Detector {
    backend: Box<dyn DetectBackend>,
}

impl Detector {
    pub fn new(backend: Box<dyn DetectBackend>) -> Self {
        Self { backend }
    }

    pub fn input_spec(&self) -> PreprocessSpec {
        self.backend.input_spec()
    }

    pub fn detect(&mut self, frame_id: u64, image: &ImageTensor) -> Result<RawDetections, InferError> {
        let (w, h) = (image.width as f64, image.height as f64);
        let mut raw = self.backend.detect(frame_id, image)?;
        raw.candidates.retain(|c| {
            let b = &c.bbox;
            [b.x_min, b.y_min, b.x_max, b.y_max].iter().all(|v| v.is_finite())
        });
        for c in &mut raw.candidates {
            let b = c.bbox;
            c.bbox = BBox {
                x_min: b.x_min.min(b.x_max),
                y_min: b.y_min.min(b.y_max),
                x_max: b.x_min.max(b.x_max),
                y_max: b.y_min.max(b.y_max),
            }
            .clamp_to(w, h);
            for s in &mut c.scores {
                *s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
            }
        }
        Ok(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    Onnx,
}

fn default_input() -> u32 {
    224
}

fn default_base() -> f64 {
    1.0
}

fn default_gain() -> f64 {
    9.0
}

fn default_scale() -> f64 {
    1.0
}

fn default_threads() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_input")]
    pub input_width: u32,
    #[serde(default = "default_input")]
    pub input_height: u32,
    #[serde(default)]
    pub layout: Layout,
    /// Metric calibration applied to model output: `depth = scale * raw + shift`.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Stub only: depth at black pixels.
    #[serde(default = "default_base")]
    pub base: f64,
    /// Stub only: extra depth at full luma.
    #[serde(default = "default_gain")]
    pub gain: f64,
}

impl Default for DepthBackendConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectBackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_input")]
    pub input_width: u32,
    #[serde(default = "default_input")]
    pub input_height: u32,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Stub only: scripted detections keyed by frame id.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Stub only: frames absent from the fixture yield no candidates
    /// instead of an error.
    #[serde(default = "default_true")]
    pub permissive: bool,
}

impl Default for DetectBackendConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn spec_of(w: u32, h: u32, layout: Layout) -> Result<PreprocessSpec, InferError> {
    if w == 0 || h == 0 {
        return Err(InferError::Config("input dims must be positive".into()));
    }
    Ok(PreprocessSpec {
        target_width: w,
        target_height: h,
        layout,
    })
}

fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn model_path(model: &Option<PathBuf>, base_dir: &Path) -> Result<PathBuf, InferError> {
    model
        .as_deref()
        .map(|p| resolve(base_dir, p))
        .ok_or_else(|| InferError::Config("onnx backend needs `model`".into()))
}

/// Builds the configured depth backend. Relative paths resolve against `base_dir`.
pub fn build_depth_estimator(cfg: &DepthBackendConfig, base_dir: &Path) -> Result<DepthEstimator, InferError> {
    let spec = spec_of(cfg.input_width, cfg.input_height, cfg.layout)?;
    let backend: Box<dyn DepthBackend> = match cfg.kind {
        BackendKind::Stub => Box::new(StubDepthBackend::new(spec, cfg.base, cfg.gain)),
        BackendKind::Onnx => Box::new(OnnxDepthBackend::load(
            &model_path(&cfg.model, base_dir)?,
            spec,
            cfg.scale,
            cfg.shift,
            cfg.threads,
        )?),
    };
    Ok(DepthEstimator::new(backend))
}

pub fn build_detector(cfg: &DetectBackendConfig, base_dir: &Path) -> Result<Detector, InferError> {
    let spec = spec_of(cfg.input_width, cfg.input_height, cfg.layout)?;
    let backend: Box<dyn DetectBackend> = match cfg.kind {
        BackendKind::Stub => {
            let fixture = match &cfg.fixture {
                Some(p) => DetectFixture::load(&resolve(base_dir, p))?,
                None => DetectFixture::default(),
            };
            Box::new(StubDetectBackend::new(spec, fixture, cfg.permissive))
        }
        BackendKind::Onnx => Box::new(OnnxDetectBackend::load(
            &model_path(&cfg.model, base_dir)?,
            spec,
            cfg.threads,
        )?),
    };
    Ok(Detector::new(backend))
}
