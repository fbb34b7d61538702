//! Dataset manifests: where images, labels, predictions and depth maps live.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::kitti::{decode_kitti_depth, KittiError};
use super::replay::list_images;
use super::yolo::{parse_yolo_labels, parse_yolo_predictions, LabelError};
use crate::types::{ClassList, DepthMap, Detection, GroundTruthObject, TypeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Label { path: PathBuf, source: LabelError },
    #[error("{path}: {source}")]
    Depth { path: PathBuf, source: KittiError },
    #[error(transparent)]
    Classes(#[from] TypeError),
    #[error("image size unknown for {0}: no image file and no image_width/image_height in manifest")]
    UnknownImageSize(String),
    #[error("{stem}: estimate is {est_w}x{est_h} but truth is {truth_w}x{truth_h}")]
    MixedImageSizes {
        stem: String,
        est_w: u32,
        est_h: u32,
        truth_w: u32,
        truth_h: u32,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub image_dir: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    pub prediction_dir: Option<PathBuf>,
    pub depth_truth_dir: Option<PathBuf>,
    pub depth_estimate_dir: Option<PathBuf>,
    pub class_list: Option<PathBuf>,
    pub image_width: Option<u32>,
    pub image_height: Option<u32>,
    #[serde(skip)]
    root: PathBuf,
}

/// Ground truth (and optionally predictions) for one image.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    pub stem: String,
    pub image_path: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub truth: Vec<GroundTruthObject>,
    pub predictions: Option<Vec<Detection>>,
}

#[derive(Debug, Clone)]
pub struct DepthSample {
    pub stem: String,
    pub truth: DepthMap,
    pub estimate: Option<DepthMap>,
}

fn read_string(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stems_with_ext(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    let rd = std::fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect())
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = read_string(path)?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| DatasetError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(m)
    }

    /// A manifest whose relative paths resolve against `root`.
    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    fn resolve(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_ref().map(|p| self.root.join(p))
    }

    pub fn image_dir(&self) -> Option<PathBuf> {
        self.resolve(&self.image_dir)
    }

    pub fn classes(&self) -> Result<ClassList, DatasetError> {
        match self.resolve(&self.class_list) {
            Some(p) => Ok(ClassList::load(&p)?),
            None => Ok(ClassList::default()),
        }
    }

    pub fn has_detection_data(&self) -> bool {
        self.label_dir.is_some()
    }

    pub fn has_depth_data(&self) -> bool {
        self.depth_truth_dir.is_some()
    }

    /// Loads every labelled image, in stem order.
    pub fn detection_samples(&self) -> Result<Vec<DetectionSample>, DatasetError> {
        let Some(label_dir) = self.resolve(&self.label_dir) else {
            return Ok(Vec::new());
        };
        let labels = stems_with_ext(&label_dir, "txt")?;
        let images: BTreeMap<String, PathBuf> = match self.image_dir() {
            Some(dir) => list_images(&dir)
                .map_err(|source| DatasetError::Io {
                    path: dir.clone(),
                    source,
                })?
                .into_iter()
                .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
                .collect(),
            None => BTreeMap::new(),
        };
        let pred_dir = self.resolve(&self.prediction_dir);
        let mut out = Vec::with_capacity(labels.len());
        for (stem, label_path) in labels {
            let image_path = images.get(&stem).cloned();
            let (width, height) = match (&image_path, self.image_width, self.image_height) {
                (Some(p), _, _) => image::image_dimensions(p).map_err(|e| DatasetError::Manifest {
                    path: p.clone(),
                    message: e.to_string(),
                })?,
                (None, Some(w), Some(h)) => (w, h),
                _ => return Err(DatasetError::UnknownImageSize(stem)),
            };
            let truth = parse_yolo_labels(&read_string(&label_path)?, width, height).map_err(
                |source| DatasetError::Label {
                    path: label_path.clone(),
                    source,
                },
            )?;
            let predictions = match &pred_dir {
                Some(dir) => {
                    let p = dir.join(format!("{stem}.txt"));
                    // a missing prediction file means the detector found nothing
                    let text = if p.exists() { read_string(&p)? } else { String::new() };
                    Some(parse_yolo_predictions(&text, width, height).map_err(|source| {
                        DatasetError::Label { path: p, source }
                    })?)
                }
                None => None,
            };
            out.push(DetectionSample {
                stem,
                image_path,
                width,
                height,
                truth,
                predictions,
            });
        }
        Ok(out)
    }

    /// Loads every ground-truth depth map with its estimate when an
    /// estimate directory is configured.
    pub fn depth_samples(&self) -> Result<Vec<DepthSample>, DatasetError> {
        let Some(truth_dir) = self.resolve(&self.depth_truth_dir) else {
            return Ok(Vec::new());
        };
        let est_dir = self.resolve(&self.depth_estimate_dir);
        let decode = |path: &Path| -> Result<DepthMap, DatasetError> {
            let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            decode_kitti_depth(&bytes).map_err(|source| DatasetError::Depth {
                path: path.to_path_buf(),
                source,
            })
        };
        let mut out = Vec::new();
        for (stem, path) in stems_with_ext(&truth_dir, "png")? {
            let truth = decode(&path)?;
            let estimate = match &est_dir {
                Some(dir) => {
                    let est = decode(&dir.join(format!("{stem}.png")))?;
                    if (est.width(), est.height()) != (truth.width(), truth.height()) {
                        return Err(DatasetError::MixedImageSizes {
                            stem,
                            est_w: est.width(),
                            est_h: est.height(),
                            truth_w: truth.width(),
                            truth_h: truth.height(),
                        });
                    }
                    Some(est)
                }
                None => None,
            };
            out.push(DepthSample {
                stem,
                truth,
                estimate,
            });
        }
        Ok(out)
    }
}
