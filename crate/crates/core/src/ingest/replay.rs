//! Frame sources. The replay source stands in for a camera by reading an
//! image directory at a fixed frame rate.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::warn;

use crate::types::{Frame, SourceKind};

/// Anything that yields frames. `None` means end of stream.
pub trait CaptureSource: Send {
    fn next_frame(&mut self) -> Option<Frame>;

    /// Frames that could not be decoded and were skipped.
    fn malformed(&self) -> u64 {
        0
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Lists the images in `dir` sorted by file name.
pub fn list_images(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_rgb(path: &Path) -> Result<(u32, u32, Vec<u8>), image::ImageError> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw()))
}

/// Replays an ordered list of image files.
///
/// Frame timestamps are nominal (`id / fps`) so that replays are
/// reproducible; `realtime` only controls whether the source sleeps to
/// honour the frame rate.
pub struct ReplaySource {
    frame_paths: Vec<PathBuf>,
    fps: f64,
    looping: bool,
    realtime: bool,
    cursor: usize,
    next_id: u64,
    malformed: u64,
    started: Option<Instant>,
}

impl ReplaySource {
    pub fn new(frame_paths: Vec<PathBuf>, fps: f64, looping: bool) -> Self {
        assert!(fps > 0.0, "replay fps must be positive");
        Self {
            frame_paths,
            fps,
            looping,
            realtime: true,
            cursor: 0,
            next_id: 0,
            malformed: 0,
            started: None,
        }
    }

    pub fn from_dir(dir: &Path, fps: f64, looping: bool) -> std::io::Result<Self> {
        Ok(Self::new(list_images(dir)?, fps, looping))
    }

    /// Disables pacing; frames are produced as fast as they decode.
    pub fn unpaced(mut self) -> Self {
        self.realtime = false;
        self
    }

    fn nominal_ns(&self, id: u64) -> u64 {
        (id as f64 * 1e9 / self.fps).round() as u64
    }

    fn pace(&mut self, ts_ns: u64) {
        if !self.realtime {
            return;
        }
        let start = *self.started.get_or_insert_with(Instant::now);
        let due = start + Duration::from_nanos(ts_ns);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

impl CaptureSource for ReplaySource {
    fn next_frame(&mut self) -> Option<Frame> {
        let n = self.frame_paths.len();
        // a full cycle with no decodable frame ends a looping replay
        let mut failures_in_a_row = 0;
        loop {
            if self.cursor >= n {
                if !self.looping || n == 0 {
                    return None;
                }
                self.cursor = 0;
            }
            if failures_in_a_row >= n {
                return None;
            }
            let path = &self.frame_paths[self.cursor];
            self.cursor += 1;
            match load_rgb(path) {
                Ok((w, h, pixels)) => {
                    let id = self.next_id;
                    let ts = self.nominal_ns(id);
                    match Frame::new(id, ts, w, h, pixels, SourceKind::Replay) {
                        Ok(frame) if w > 0 && h > 0 => {
                            self.next_id += 1;
                            self.pace(ts);
                            return Some(frame);
                        }
                        _ => {
                            warn!("skipping empty frame {}", path.display());
                        }
                    }
                }
                Err(e) => warn!("skipping malformed frame {}: {e}", path.display()),
            }
            self.malformed += 1;
            failures_in_a_row += 1;
        }
    }

    fn malformed(&self) -> u64 {
        self.malformed
    }
}

/// Deterministic generated frames, used by `bench` when no replay directory
/// is configured.
pub struct SyntheticSource {
    width: u32,
    height: u32,
    remaining: Option<u64>,
    fps: f64,
    next_id: u64,
}

impl SyntheticSource {
    pub fn new(width: u32, height: u32, frames: Option<u64>, fps: f64) -> Self {
        Self {
            width,
            height,
            remaining: frames,
            fps,
            next_id: 0,
        }
    }

    fn render(&self, id: u64) -> Vec<u8> {
        let (w, h) = (self.width as u64, self.height as u64);
        let mut px = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                px.push(((x + id) * 255 / w.max(1)) as u8);
                px.push((y * 255 / h.max(1)) as u8);
                px.push(((x + y + 3 * id) % 256) as u8);
            }
        }
        px
    }
}

impl CaptureSource for SyntheticSource {
    fn next_frame(&mut self) -> Option<Frame> {
        if let Some(r) = self.remaining.as_mut() {
            if *r == 0 {
                return None;
            }
            *r -= 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        let ts = (id as f64 * 1e9 / self.fps).round() as u64;
        Frame::new(
            id,
            ts,
            self.width,
            self.height,
            self.render(id),
            SourceKind::Synthetic,
        )
        .ok()
    }
}
