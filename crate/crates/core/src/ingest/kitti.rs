//! KITTI depth-map PNG codec.
//!
//! Depth is stored as single-channel 16-bit PNG; `meters = raw / 256` and a
//! raw value of 0 marks a pixel without ground truth.

use std::io::Cursor;

use thiserror::Error;

use crate::types::DepthMap;

/// Fixed-point scale of the KITTI encoding.
pub const KITTI_DEPTH_SCALE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("malformed png: {0}")]
    MalformedPng(String),
    #[error("expected 16-bit single-channel png, got {bit_depth}-bit {color}")]
    WrongBitDepth { bit_depth: u8, color: String },
    #[error("depth {0} m not representable in 16-bit fixed point")]
    Unrepresentable(f64),
}

/// A decoded raw 16-bit image, kept for lossless re-encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDepthImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u16>,
}

impl RawDepthImage {
    pub fn to_depth_map(&self) -> DepthMap {
        let depth = self
            .pixels
            .iter()
            .map(|&p| p as f64 / KITTI_DEPTH_SCALE)
            .collect();
        let valid = self.pixels.iter().map(|&p| p != 0).collect();
        DepthMap::new(self.width, self.height, depth, valid).expect("raw depth is non-negative")
    }

    /// Quantises a depth map back into KITTI fixed point. Invalid pixels
    /// become 0.
    pub fn from_depth_map(map: &DepthMap) -> Result<Self, KittiError> {
        let pixels = map
            .depth()
            .iter()
            .zip(map.valid())
            .map(|(&d, &v)| {
                if !v {
                    return Ok(0);
                }
                let raw = (d * KITTI_DEPTH_SCALE).round();
                if raw > u16::MAX as f64 {
                    Err(KittiError::Unrepresentable(d))
                } else {
                    Ok(raw as u16)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            width: map.width(),
            height: map.height(),
            pixels,
        })
    }
}

pub fn decode_kitti_raw(png_bytes: &[u8]) -> Result<RawDepthImage, KittiError> {
    let decoder = png::Decoder::new(Cursor::new(png_bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| KittiError::MalformedPng(e.to_string()))?;
    let info = reader.info();
    let (color, bit_depth) = (info.color_type, info.bit_depth);
    if color != png::ColorType::Grayscale || bit_depth != png::BitDepth::Sixteen {
        return Err(KittiError::WrongBitDepth {
            bit_depth: bit_depth as u8,
            color: format!("{color:?}"),
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| KittiError::MalformedPng("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| KittiError::MalformedPng(e.to_string()))?;
    let (width, height) = (out.width, out.height);
    let row_bytes = out.line_size;
    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for row in buf[..out.buffer_size()].chunks_exact(row_bytes) {
        pixels.extend(
            row[..width as usize * 2]
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]])),
        );
    }
    Ok(RawDepthImage {
        width,
        height,
        pixels,
    })
}

/// Decodes a KITTI depth PNG into a metric depth map.
pub fn decode_kitti_depth(png_bytes: &[u8]) -> Result<DepthMap, KittiError> {
    decode_kitti_raw(png_bytes).map(|raw| raw.to_depth_map())
}

pub fn encode_kitti_raw(img: &RawDepthImage) -> Result<Vec<u8>, KittiError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc
            .write_header()
            .map_err(|e| KittiError::MalformedPng(e.to_string()))?;
        let data: Vec<u8> = img.pixels.iter().flat_map(|p| p.to_be_bytes()).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| KittiError::MalformedPng(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_kitti_depth(map: &DepthMap) -> Result<Vec<u8>, KittiError> {
    encode_kitti_raw(&RawDepthImage::from_depth_map(map)?)
}
