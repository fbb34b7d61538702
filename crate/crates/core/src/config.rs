//! The pipeline configuration document and its environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alert::AlertConfig;
use crate::fusion::FusionConfig;
use crate::infer::{DepthBackendConfig, DetectBackendConfig};
use crate::postprocess::PostprocessConfig;
use crate::types::ClassList;

/// Top-level tables that environment overrides may target.
pub const SECTIONS: [&str; 9] = [
    "input",
    "queue",
    "backends",
    "postprocess",
    "fusion",
    "alert",
    "sinks",
    "run",
    "evaluate",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config at `{path}`: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: &str, message: impl ToString) -> Self {
        Self::Invalid {
            path: path.to_string(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Replay,
    #[default]
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    /// Replay directory of image files.
    pub dir: Option<PathBuf>,
    pub fps: f64,
    #[serde(rename = "loop")]
    pub looping: bool,
    /// Sleep between frames to honour `fps`.
    pub realtime: bool,
    /// Synthetic frame size and count (unbounded when unset).
    pub width: u32,
    pub height: u32,
    pub frames: Option<u64>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            kind: InputKind::Synthetic,
            dir: None,
            fps: 30.0,
            looping: false,
            realtime: false,
            width: 640,
            height: 480,
            frames: Some(100),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    /// Evict the oldest queued frame when full; evictions are counted.
    #[default]
    DropOldest,
    /// Make the source wait for space.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    pub depth: usize,
    pub policy: QueuePolicy,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            policy: QueuePolicy::DropOldest,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub depth: DepthBackendConfig,
    pub detect: DetectBackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinksConfig {
    /// Tab-separated event trace file.
    pub trace: Option<PathBuf>,
    pub console: bool,
    pub speech: bool,
    /// Per-sink queue capacity.
    pub buffer: usize,
}

impl Default for SinksConfig {
    fn default() -> Self {
        Self {
            trace: None,
            console: false,
            speech: false,
            buffer: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_frames: Option<u64>,
    pub duration_s: Option<f64>,
    /// Minimum sustained fps for `bench` to succeed.
    pub fps_floor: f64,
    /// Where to write run statistics as JSON.
    pub stats: Option<PathBuf>,
    /// Seconds allowed for queues and sinks to drain at shutdown.
    pub drain_timeout_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_frames: None,
            duration_s: None,
            fps_floor: 15.0,
            stats: None,
            drain_timeout_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub iou_threshold: f64,
    pub curve_points: usize,
    pub map50_95: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            curve_points: crate::metrics::DEFAULT_CURVE_POINTS,
            map50_95: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Class-name file, one name per line; RSUD20K order when unset.
    pub classes: Option<PathBuf>,
    pub input: InputConfig,
    pub queue: QueueConfig,
    pub backends: BackendsConfig,
    pub postprocess: PostprocessConfig,
    pub fusion: FusionConfig,
    pub alert: AlertConfig,
    pub sinks: SinksConfig,
    pub run: RunConfig,
    pub evaluate: EvaluateConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Parses an override value as a TOML literal, falling back to a plain
/// string (so `FUSION__DEPTH_STATISTIC=p10` works unquoted).
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `SECTION__KEY[__SUBKEY]=value` overrides for known sections.
pub fn apply_env_overrides(
    doc: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<Vec<String>, ConfigError> {
    let mut applied = Vec::new();
    for (name, raw) in vars {
        let parts: Vec<String> = name.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if parts.len() < 2 || !SECTIONS.contains(&parts[0].as_str()) || parts.iter().any(String::is_empty) {
            continue;
        }
        let dotted = parts.join(".");
        let mut table = &mut *doc;
        for key in &parts[..parts.len() - 1] {
            let entry = table
                .entry(key.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::invalid(&dotted, format!("`{key}` is not a table")))?;
        }
        table.insert(parts[parts.len() - 1].clone(), override_value(&raw));
        applied.push(dotted);
    }
    Ok(applied)
}

impl PipelineConfig {
    /// Parses a document with the given overrides and validates it.
    pub fn from_toml(
        text: &str,
        base_dir: &Path,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::invalid("<document>", e.message()))?;
        for name in apply_env_overrides(&mut doc, vars)? {
            log::info!("config override from environment: {name}");
        }
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::invalid(&path, e.into_inner().message())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file, applying overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base, std::env::vars())
    }

    /// Defaults plus environment overrides, for running without a file.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_toml("", Path::new("."), std::env::vars())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn class_list(&self) -> Result<ClassList, ConfigError> {
        match &self.classes {
            Some(p) => ClassList::load(&self.resolve(p)).map_err(|e| ConfigError::invalid("classes", e)),
            None => Ok(ClassList::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let i = &self.input;
        if !(i.fps.is_finite() && i.fps > 0.0) {
            return Err(ConfigError::invalid("input.fps", "must be positive"));
        }
        match i.kind {
            InputKind::Replay if i.dir.is_none() => {
                return Err(ConfigError::invalid("input.dir", "required for replay input"))
            }
            InputKind::Synthetic if i.width == 0 || i.height == 0 => {
                return Err(ConfigError::invalid("input.width", "synthetic frames need positive size"))
            }
            _ => {}
        }
        if self.queue.depth == 0 {
            return Err(ConfigError::invalid("queue.depth", "must be at least 1"));
        }
        if self.sinks.buffer == 0 {
            return Err(ConfigError::invalid("sinks.buffer", "must be at least 1"));
        }
        self.postprocess
            .validate()
            .map_err(|m| ConfigError::invalid("postprocess", m))?;
        self.fusion.validate().map_err(|m| ConfigError::invalid("fusion", m))?;
        let classes = self.class_list()?;
        self.alert
            .to_policy(&classes)
            .map_err(|e| ConfigError::invalid("alert", e))?;
        let r = &self.run;
        if !(r.fps_floor.is_finite() && r.fps_floor >= 0.0) {
            return Err(ConfigError::invalid("run.fps_floor", "must be non-negative"));
        }
        if r.duration_s.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
            return Err(ConfigError::invalid("run.duration_s", "must be positive"));
        }
        if !(r.drain_timeout_s.is_finite() && r.drain_timeout_s >= 0.0) {
            return Err(ConfigError::invalid("run.drain_timeout_s", "must be non-negative"));
        }
        let e = &self.evaluate;
        if !(e.iou_threshold > 0.0 && e.iou_threshold <= 1.0) {
            return Err(ConfigError::invalid("evaluate.iou_threshold", "must be in (0, 1]"));
        }
        if e.curve_points < 2 {
            return Err(ConfigError::invalid("evaluate.curve_points", "must be at least 2"));
        }
        Ok(())
    }
}
