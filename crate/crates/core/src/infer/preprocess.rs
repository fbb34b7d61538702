use serde::{Deserialize, Serialize};

use super::InferError;
use crate::types::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// HWC, RGB triplets per pixel.
    #[default]
    Interleaved,
    /// CHW, one plane per channel.
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessSpec {
    pub target_width: u32,
    pub target_height: u32,
    pub layout: Layout,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            target_width: 224,
            target_height: 224,
            layout: Layout::Interleaved,
        }
    }
}

/// A resized RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub width: u32,
    pub height: u32,
    pub layout: Layout,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn rgb(&self, x: u32, y: u32) -> [f32; 3] {
        let (w, h) = (self.width as usize, self.height as usize);
        let (x, y) = (x as usize, y as usize);
        match self.layout {
            Layout::Interleaved => {
                let i = (y * w + x) * 3;
                [self.data[i], self.data[i + 1], self.data[i + 2]]
            }
            Layout::Planar => {
                let i = y * w + x;
                [self.data[i], self.data[i + w * h], self.data[i + 2 * w * h]]
            }
        }
    }

    pub fn to_layout(&self, layout: Layout) -> ImageTensor {
        if layout == self.layout {
            return self.clone();
        }
        let n = self.width as usize * self.height as usize;
        let mut data = vec![0.0; n * 3];
        for i in 0..n {
            for c in 0..3 {
                match layout {
                    Layout::Planar => data[c * n + i] = self.data[i * 3 + c],
                    Layout::Interleaved => data[i * 3 + c] = self.data[c * n + i],
                }
            }
        }
        ImageTensor {
            width: self.width,
            height: self.height,
            layout,
            data,
        }
    }
}

/// Source sampling position for output index `o` under half-pixel-centre
/// alignment, as (lower index, upper index, weight of upper).
fn sample_axis(o: u32, in_len: u32, out_len: u32) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(in_len as usize - 1);
    (lo, hi, s - lo as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize to the target size followed by scaling to `[0, 1]`.
pub fn preprocess(frame: &Frame, spec: &PreprocessSpec) -> Result<ImageTensor, InferError> {
    if frame.width == 0 || frame.height == 0 {
        return Err(InferError::ZeroSizedFrame);
    }
    if spec.target_width == 0 || spec.target_height == 0 {
        return Err(InferError::ZeroSizedTarget);
    }
    let (ow, oh) = (spec.target_width, spec.target_height);
    let src = frame.pixels();
    let stride = frame.width as usize * 3;
    let xs: Vec<_> = (0..ow).map(|x| sample_axis(x, frame.width, ow)).collect();
    let mut data = Vec::with_capacity(ow as usize * oh as usize * 3);
    for y in 0..oh {
        let (y0, y1, fy) = sample_axis(y, frame.height, oh);
        let (r0, r1) = (&src[y0 * stride..], &src[y1 * stride..]);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |row: &[u8], x: usize| row[x * 3 + c] as f64;
                let top = lerp(p(r0, x0), p(r0, x1), fx);
                let bottom = lerp(p(r1, x0), p(r1, x1), fx);
                let v = lerp(top, bottom, fy) / 255.0;
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let tensor = ImageTensor {
        width: ow,
        height: oh,
        layout: Layout::Interleaved,
        data,
    };
    Ok(tensor.to_layout(spec.layout))
}
