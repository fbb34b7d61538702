//! Dataset decoding and frame sources.

pub mod kitti;
pub mod manifest;
pub mod replay;
pub mod yolo;

pub use kitti::{decode_kitti_depth, decode_kitti_raw, encode_kitti_depth, encode_kitti_raw, KittiError, RawDepthImage};
pub use manifest::{DatasetError, DatasetManifest, DepthSample, DetectionSample};
pub use replay::{list_images, load_rgb, CaptureSource, ReplaySource, SyntheticSource};
pub use yolo::{format_yolo_labels, parse_yolo_labels, parse_yolo_predictions, LabelError};
