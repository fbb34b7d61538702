//! Dataset-level evaluation: runs the metric functions over a manifest and
//! writes the report and plot data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::infer::{preprocess, DepthEstimator, Detector, InferError};
use crate::ingest::{list_images, load_rgb, DatasetError, DatasetManifest};
use crate::metrics::{
    DepthAccumulator, DepthMetrics, DepthSamplePair, DetectionEvaluator, MatchConfig, MetricError, PRCurve,
    BACKGROUND,
};
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::types::{ClassId, ClassList, DepthMap, Detection, Frame, GroundTruthObject, SourceKind, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("dataset has no usable samples")]
    EmptyDataset,
    #[error("{stem}: no predictions file and no detector configured")]
    MissingPredictions { stem: String },
    #[error("{stem}: no estimate and no depth backend configured")]
    MissingEstimate { stem: String },
    #[error("{stem}: no image to run the backend on")]
    MissingImage { stem: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub matching: MatchConfig,
    pub curve_points: usize,
    /// Also average mAP over IoU thresholds 0.50, 0.55, ..., 0.95.
    pub map50_95: bool,
    /// Applied to backend output only; prediction files are used as-is.
    pub postprocess: PostprocessConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            matching: MatchConfig::default(),
            curve_points: crate::metrics::DEFAULT_CURVE_POINTS,
            map50_95: false,
            postprocess: PostprocessConfig::default(),
        }
    }
}

/// Backends used for samples that lack prediction or estimate files.
#[derive(Default)]
pub struct EvalBackends {
    pub detector: Option<Detector>,
    pub depth: Option<DepthEstimator>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: ClassId,
    pub name: String,
    pub n_truth: usize,
    pub n_predictions: usize,
    pub ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestF1 {
    pub threshold: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub n_images: usize,
    pub n_truth: usize,
    pub n_predictions: usize,
    pub iou_threshold: f64,
    pub map50: f64,
    pub map50_95: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_f1: BestF1,
    pub per_class: Vec<ClassReport>,
    /// `[true][predicted]`, background last.
    pub confusion_matrix: Vec<Vec<u64>>,
    #[serde(skip)]
    pub curve: PRCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthReport {
    pub n_images: usize,
    #[serde(flatten)]
    pub metrics: DepthMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSizeReport {
    pub original_bytes: u64,
    pub quantized_bytes: u64,
    pub original_mb: f64,
    pub quantized_mb: f64,
    pub ratio: f64,
    pub reduction_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub depth: Option<DepthReport>,
    pub detection: Option<DetectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_sizes: Option<ModelSizeReport>,
}

/// Size comparison; "MB" is 10^6 bytes.
pub fn compare_sizes(original_bytes: u64, quantized_bytes: u64) -> ModelSizeReport {
    let ratio = if original_bytes == 0 {
        1.0
    } else {
        quantized_bytes as f64 / original_bytes as f64
    };
    ModelSizeReport {
        original_bytes,
        quantized_bytes,
        original_mb: original_bytes as f64 / 1e6,
        quantized_mb: quantized_bytes as f64 / 1e6,
        ratio,
        reduction_percent: 100.0 * (1.0 - ratio),
    }
}

pub fn compare_model_files(original: &Path, quantized: &Path) -> Result<ModelSizeReport, EvalError> {
    let size = |p: &Path| {
        std::fs::metadata(p).map(|m| m.len()).map_err(|e| EvalError::Io {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    Ok(compare_sizes(size(original)?, size(quantized)?))
}

/// mAP averaged over IoU thresholds 0.50 to 0.95 in steps of 0.05.
pub fn map_over_iou_range(images: &[(Vec<Detection>, Vec<GroundTruthObject>)]) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for k in 0..10 {
        let mut ev = DetectionEvaluator::new(MatchConfig {
            iou_threshold: (50 + 5 * k) as f64 / 100.0,
        });
        for (p, t) in images {
            ev.add_image(p, t);
        }
        total += ev.finish(2)?.map;
    }
    Ok(total / 10.0)
}

/// Detection metrics over `(predictions, truth)` pairs, one per image.
pub fn detection_report(
    images: &[(Vec<Detection>, Vec<GroundTruthObject>)],
    classes: &ClassList,
    opts: &EvalOptions,
) -> Result<DetectionReport, EvalError> {
    if images.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut ev = DetectionEvaluator::new(opts.matching);
    for (p, t) in images {
        ev.add_image(p, t);
    }
    let m = ev.finish(opts.curve_points)?;
    let per_class = ClassId::all()
        .map(|c| {
            let counts = m.counts.per_class[c.index()];
            ClassReport {
                class_id: c,
                name: classes.name(c).to_string(),
                n_truth: ev.class_truth(c),
                n_predictions: ev.class_flags(c).len(),
                ap: m.per_class_ap[c.index()],
                precision: crate::metrics::precision(&counts),
                recall: crate::metrics::recall(&counts),
                f1: crate::metrics::f1(&counts),
            }
        })
        .collect();
    let best_f1 = m
        .curve
        .points
        .iter()
        .fold(BestF1 { threshold: 0.0, f1: -1.0 }, |best, p| {
            if p.f1 > best.f1 {
                BestF1 {
                    threshold: p.threshold,
                    f1: p.f1,
                }
            } else {
                best
            }
        });
    let map50_95 = if opts.map50_95 {
        Some(map_over_iou_range(images)?)
    } else {
        None
    };
    Ok(DetectionReport {
        n_images: m.n_images,
        n_truth: m.n_truth,
        n_predictions: m.n_predictions,
        iou_threshold: m.iou_threshold,
        map50: m.map,
        map50_95,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        best_f1,
        per_class,
        confusion_matrix: m.counts.matrix.iter().map(|r| r.to_vec()).collect(),
        curve: m.curve,
    })
}

/// Pooled depth metrics over `(estimate, truth)` pairs.
pub fn depth_report(pairs: &[(DepthMap, DepthMap)]) -> Result<DepthReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut acc = DepthAccumulator::default();
    for (est, truth) in pairs {
        acc.add_pair(&DepthSamplePair::new(est, truth)?);
    }
    Ok(DepthReport {
        n_images: pairs.len(),
        metrics: acc.finish()?,
    })
}

fn frame_from_image(path: &Path) -> Result<Frame, EvalError> {
    let (w, h, pixels) = load_rgb(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Frame::new(0, 0, w, h, pixels, SourceKind::Replay).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs the detector on an image and maps boxes back to image pixels.
fn detect_image(
    det: &mut Detector,
    path: &Path,
    cfg: &PostprocessConfig,
) -> Result<Vec<Detection>, EvalError> {
    let frame = frame_from_image(path)?;
    let spec = det.input_spec();
    let tensor = preprocess(&frame, &spec)?;
    let raw = det.detect(frame.id, &tensor)?;
    let sx = frame.width as f64 / spec.target_width as f64;
    let sy = frame.height as f64 / spec.target_height as f64;
    Ok(postprocess(&raw, cfg)
        .into_iter()
        .map(|d| Detection {
            bbox: d.bbox.scale(sx, sy),
            ..d
        })
        .collect())
}

/// Nearest-neighbour resample of a backend depth map onto the truth grid.
pub fn resample_depth(src: &DepthMap, width: u32, height: u32) -> DepthMap {
    if (src.width(), src.height()) == (width, height) {
        return src.clone();
    }
    let (sw, sh) = (src.width() as f64, src.height() as f64);
    let mut depth = Vec::with_capacity(width as usize * height as usize);
    let mut valid = Vec::with_capacity(depth.capacity());
    for y in 0..height {
        let sy = (((y as f64 + 0.5) * sh / height as f64) as u32).min(src.height() - 1);
        for x in 0..width {
            let sx = (((x as f64 + 0.5) * sw / width as f64) as u32).min(src.width() - 1);
            let i = sy as usize * src.width() as usize + sx as usize;
            depth.push(src.depth()[i]);
            valid.push(src.valid()[i]);
        }
    }
    DepthMap::new(width, height, depth, valid).expect("resampled values come from a valid map")
}

fn images_by_stem(manifest: &DatasetManifest) -> Result<BTreeMap<String, PathBuf>, EvalError> {
    let Some(dir) = manifest.image_dir() else {
        return Ok(BTreeMap::new());
    };
    let files = list_images(&dir).map_err(|e| EvalError::Io {
        path: dir.clone(),
        message: e.to_string(),
    })?;
    Ok(files
        .into_iter()
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect())
}

/// Evaluates everything the manifest provides. Samples without prediction
/// or estimate files are run through `backends` when available.
pub fn evaluate(
    manifest: &DatasetManifest,
    backends: &mut EvalBackends,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let classes = manifest.classes()?;
    let images = images_by_stem(manifest)?;

    let mut detection = None;
    if manifest.has_detection_data() {
        let mut pairs = Vec::new();
        for s in manifest.detection_samples()? {
            let preds = match (s.predictions, backends.detector.as_mut()) {
                (Some(p), _) => p,
                (None, Some(det)) => {
                    let path = s.image_path.ok_or_else(|| EvalError::MissingImage { stem: s.stem.clone() })?;
                    detect_image(det, &path, &opts.postprocess)?
                }
                (None, None) => return Err(EvalError::MissingPredictions { stem: s.stem }),
            };
            pairs.push((preds, s.truth));
        }
        if !pairs.is_empty() {
            detection = Some(detection_report(&pairs, &classes, opts)?);
        }
    }

    let mut depth = None;
    if manifest.has_depth_data() {
        let mut pairs = Vec::new();
        for s in manifest.depth_samples()? {
            let est = match (s.estimate, backends.depth.as_mut()) {
                (Some(e), _) => e,
                (None, Some(backend)) => {
                    let path = images
                        .get(&s.stem)
                        .ok_or_else(|| EvalError::MissingImage { stem: s.stem.clone() })?;
                    let frame = frame_from_image(path)?;
                    let map = backend.estimate(&preprocess(&frame, &backend.input_spec())?)?;
                    resample_depth(&map, s.truth.width(), s.truth.height())
                }
                (None, None) => return Err(EvalError::MissingEstimate { stem: s.stem }),
            };
            pairs.push((est, s.truth));
        }
        if !pairs.is_empty() {
            depth = Some(depth_report(&pairs)?);
        }
    }

    if detection.is_none() && depth.is_none() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(EvalReport {
        class_names: classes.names().to_vec(),
        depth,
        detection,
        model_sizes: None,
    })
}

/// Tab-separated confusion matrix with class-name headers.
pub fn confusion_tsv(matrix: &[Vec<u64>], classes: &ClassList) -> String {
    let mut names: Vec<&str> = classes.names().iter().map(String::as_str).collect();
    names.push("background");
    debug_assert_eq!(names.len(), BACKGROUND + 1);
    let mut s = String::from("true\\pred");
    for n in &names {
        s.push('\t');
        s.push_str(n);
    }
    s.push('\n');
    for (row, name) in matrix.iter().zip(&names) {
        s.push_str(name);
        for v in row {
            s.push_str(&format!("\t{v}"));
        }
        s.push('\n');
    }
    s
}

/// Writes `report.json`, plus `pr_curve.tsv` and `confusion_matrix.tsv`
/// when detection metrics exist. Returns the paths written.
pub fn write_report(report: &EvalReport, classes: &ClassList, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |path: &Path, e: std::io::Error| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| io(&json_path, e))?;
    written.push(json_path);
    if let Some(det) = &report.detection {
        let curve = dir.join("pr_curve.tsv");
        std::fs::write(&curve, det.curve.to_tsv()).map_err(|e| io(&curve, e))?;
        written.push(curve);
        let cm = dir.join("confusion_matrix.tsv");
        std::fs::write(&cm, confusion_tsv(&det.confusion_matrix, classes)).map_err(|e| io(&cm, e))?;
        written.push(cm);
    }
    Ok(written)
}

/// Number of rows and columns in the confusion matrix.
pub const CONFUSION_SIZE: usize = NUM_CLASSES + 1;
