//! Runtime adapter for exported `.onnx` models, compiled in with the `onnx`
//! feature. Without it the constructors fail with
//! [`InferError::RuntimeUnavailable`] and only the stub backends exist.
//!
//! Depth models must produce a `[1, H, W]` or `[1, 1, H, W]` tensor.
//! Detection models must produce YOLO-style `[1, 4 + 13, N]` (or the
//! transposed `[1, N, 4 + 13]`) rows of `cx, cy, w, h` in input pixels
//! followed by per-class scores.

use std::path::Path;

use super::{DepthBackend, DetectBackend, ImageTensor, InferError, PreprocessSpec, RawDepth, RawDetections};
#[cfg(feature = "onnx")]
use super::{Layout, RawCandidate};
#[cfg(feature = "onnx")]
use crate::types::{BBox, NUM_CLASSES};

#[cfg(feature = "onnx")]
mod runtime {
    use super::*;
    use tract_onnx::prelude::*;

    pub type Plan = Arc<TypedRunnableModel>;

    pub fn input_shape(spec: &PreprocessSpec) -> [usize; 4] {
        let (w, h) = (spec.target_width as usize, spec.target_height as usize);
        match spec.layout {
            Layout::Planar => [1, 3, h, w],
            Layout::Interleaved => [1, h, w, 3],
        }
    }

    pub fn load(path: &Path, spec: &PreprocessSpec) -> Result<Plan, InferError> {
        let fail = |e: TractError| InferError::ModelLoadFailure {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if !path.exists() {
            return Err(InferError::ModelLoadFailure {
                path: path.to_path_buf(),
                message: "file not found".into(),
            });
        }
        let expected = input_shape(spec);
        let mut model = tract_onnx::onnx().model_for_path(path).map_err(fail)?;
        let declared = model.input_fact(0).map_err(fail)?.clone();
        if let Some(shape) = declared.shape.as_concrete_finite().map_err(fail)? {
            let matches = shape.len() == 4 && shape.iter().zip(expected).all(|(&d, e)| d == e);
            if !matches {
                return Err(InferError::ShapeMismatch {
                    expected: format!("{expected:?}"),
                    actual: format!("{shape:?}"),
                });
            }
        }
        model
            .set_input_fact(0, f32::fact(expected).into())
            .map_err(fail)?;
        model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(fail)
    }

    pub fn run(plan: &Plan, spec: &PreprocessSpec, image: &ImageTensor) -> Result<Tensor, InferError> {
        if (image.width, image.height) != (spec.target_width, spec.target_height) {
            return Err(InferError::ShapeMismatch {
                expected: format!("{}x{}", spec.target_width, spec.target_height),
                actual: format!("{}x{}", image.width, image.height),
            });
        }
        let laid_out = image.to_layout(spec.layout);
        let input = Tensor::from_shape(&input_shape(spec), &laid_out.data)
            .map_err(|e| InferError::Runtime(e.to_string()))?;
        let mut out = plan
            .run(tvec!(input.into()))
            .map_err(|e| InferError::Runtime(e.to_string()))?;
        if out.is_empty() {
            return Err(InferError::Runtime("model produced no outputs".into()));
        }
        Ok(out.remove(0).into_tensor())
    }
}

pub struct OnnxDepthBackend {
    spec: PreprocessSpec,
    #[cfg(feature = "onnx")]
    plan: runtime::Plan,
    #[cfg(feature = "onnx")]
    scale: f64,
    #[cfg(feature = "onnx")]
    shift: f64,
}

impl OnnxDepthBackend {
    #[cfg(feature = "onnx")]
    pub fn load(path: &Path, spec: PreprocessSpec, scale: f64, shift: f64, threads: usize) -> Result<Self, InferError> {
        log::debug!("tract runs single-threaded; ignoring threads = {threads}");
        Ok(Self {
            plan: runtime::load(path, &spec)?,
            spec,
            scale,
            shift,
        })
    }

    #[cfg(not(feature = "onnx"))]
    pub fn load(_path: &Path, _spec: PreprocessSpec, _scale: f64, _shift: f64, _threads: usize) -> Result<Self, InferError> {
        Err(InferError::RuntimeUnavailable)
    }
}

impl DepthBackend for OnnxDepthBackend {
    fn input_spec(&self) -> PreprocessSpec {
        self.spec
    }

    #[cfg(feature = "onnx")]
    fn estimate(&mut self, image: &ImageTensor) -> Result<RawDepth, InferError> {
        let out = runtime::run(&self.plan, &self.spec, image)?;
        let shape = out.shape().to_vec();
        let (h, w) = match shape.as_slice() {
            [1, h, w] | [1, 1, h, w] => (*h, *w),
            _ => {
                return Err(InferError::ShapeMismatch {
                    expected: "[1, H, W] or [1, 1, H, W]".into(),
                    actual: format!("{shape:?}"),
                })
            }
        };
        let view = out
            .to_plain_array_view::<f32>()
            .map_err(|e| InferError::Runtime(e.to_string()))?;
        let values = view
            .iter()
            .map(|&v| (self.scale * v as f64 + self.shift) as f32)
            .collect();
        Ok(RawDepth {
            width: w as u32,
            height: h as u32,
            values,
        })
    }

    #[cfg(not(feature = "onnx"))]
    fn estimate(&mut self, _image: &ImageTensor) -> Result<RawDepth, InferError> {
        Err(InferError::RuntimeUnavailable)
    }
}

pub struct OnnxDetectBackend {
    spec: PreprocessSpec,
    #[cfg(feature = "onnx")]
    plan: runtime::Plan,
}

impl OnnxDetectBackend {
    #[cfg(feature = "onnx")]
    pub fn load(path: &Path, spec: PreprocessSpec, threads: usize) -> Result<Self, InferError> {
        log::debug!("tract runs single-threaded; ignoring threads = {threads}");
        Ok(Self {
            plan: runtime::load(path, &spec)?,
            spec,
        })
    }

    #[cfg(not(feature = "onnx"))]
    pub fn load(_path: &Path, _spec: PreprocessSpec, _threads: usize) -> Result<Self, InferError> {
        Err(InferError::RuntimeUnavailable)
    }
}

/// Splits a YOLO head output into candidates. `rows_first` is true for
/// `[N, 17]` layouts and false for `[17, N]`.
#[cfg(feature = "onnx")]
fn decode_yolo_rows(data: &[f32], n: usize, rows_first: bool) -> RawDetections {
    let width = 4 + NUM_CLASSES;
    let at = |i: usize, k: usize| -> f64 {
        if rows_first {
            data[i * width + k] as f64
        } else {
            data[k * n + i] as f64
        }
    };
    let candidates = (0..n)
        .map(|i| {
            let (cx, cy, w, h) = (at(i, 0), at(i, 1), at(i, 2), at(i, 3));
            let mut scores = [0.0; NUM_CLASSES];
            for (c, s) in scores.iter_mut().enumerate() {
                *s = at(i, 4 + c);
            }
            RawCandidate {
                bbox: BBox {
                    x_min: cx - w / 2.0,
                    y_min: cy - h / 2.0,
                    x_max: cx + w / 2.0,
                    y_max: cy + h / 2.0,
                },
                scores,
            }
        })
        .collect();
    RawDetections { candidates }
}

impl DetectBackend for OnnxDetectBackend {
    fn input_spec(&self) -> PreprocessSpec {
        self.spec
    }

    #[cfg(feature = "onnx")]
    fn detect(&mut self, _frame_id: u64, image: &ImageTensor) -> Result<RawDetections, InferError> {
        let out = runtime::run(&self.plan, &self.spec, image)?;
        let shape = out.shape().to_vec();
        let width = 4 + NUM_CLASSES;
        let data: Vec<f32> = out
            .to_plain_array_view::<f32>()
            .map_err(|e| InferError::Runtime(e.to_string()))?
            .iter()
            .copied()
            .collect();
        let data = data.as_slice();
        match shape.as_slice() {
            [1, k, n] if *k == width => Ok(decode_yolo_rows(data, *n, false)),
            [1, n, k] if *k == width => Ok(decode_yolo_rows(data, *n, true)),
            _ => Err(InferError::ShapeMismatch {
                expected: format!("[1, {width}, N] or [1, N, {width}]"),
                actual: format!("{shape:?}"),
            }),
        }
    }

    #[cfg(not(feature = "onnx"))]
    fn detect(&mut self, _frame_id: u64, _image: &ImageTensor) -> Result<RawDetections, InferError> {
        Err(InferError::RuntimeUnavailable)
    }
}
