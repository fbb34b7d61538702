//! Command implementations behind the `nearsight` binary.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, InputKind, PipelineConfig, QueuePolicy};
use crate::eval::{compare_model_files, evaluate, write_report, EvalBackends, EvalError, EvalOptions, EvalReport};
use crate::infer::{build_depth_estimator, build_detector};
use crate::ingest::{DatasetError, DatasetManifest};
use crate::metrics::MatchConfig;
use crate::pipeline::{Pipeline, PipelineError, RunOutput, RunStats};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bench needs at least one frame")]
    EmptyBench,
    #[error("sustained {fps:.1} fps is below the floor of {floor:.1} fps")]
    BelowFpsFloor { fps: f64, floor: f64 },
    #[error("{0}: no such file")]
    FileMissing(PathBuf),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    /// Stable identifier printed in the error record.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Pipeline(PipelineError::Config(_)) => "ConfigInvalid",
            CliError::Pipeline(PipelineError::BackendLoad(_)) => "BackendLoadFailure",
            CliError::Pipeline(PipelineError::Backend { .. }) => "BackendFailure",
            CliError::Pipeline(PipelineError::Alert(_)) => "AlertFailure",
            CliError::Pipeline(PipelineError::Io { .. }) | CliError::Io { .. } => "IoError",
            CliError::Eval(EvalError::EmptyDataset) => "EmptyDataset",
            CliError::Eval(EvalError::Dataset(DatasetError::MixedImageSizes { .. })) => "MixedImageSizes",
            CliError::Eval(EvalError::Infer(_)) => "BackendFailure",
            CliError::Eval(EvalError::Metric(_)) => "MetricUndefined",
            CliError::Eval(_) => "DatasetInvalid",
            CliError::EmptyBench => "EmptyBench",
            CliError::BelowFpsFloor { .. } => "BelowFpsFloor",
            CliError::FileMissing(_) => "FileMissing",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "ConfigInvalid" => 3,
            "BackendLoadFailure" => 4,
            "BackendFailure" | "AlertFailure" => 5,
            "EmptyDataset" => 6,
            "MixedImageSizes" => 7,
            "DatasetInvalid" | "MetricUndefined" => 8,
            "EmptyBench" => 9,
            "BelowFpsFloor" => 10,
            "FileMissing" => 11,
            _ => 12,
        }
    }

    /// One-line JSON record: `{"error": code, "message": text}`.
    pub fn to_record(&self) -> String {
        serde_json::json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

/// Loads `path`, or defaults when absent; environment overrides apply
/// either way.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::from_env()?,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs the pipeline and writes stats when configured.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunOutput, CliError> {
    let out = Pipeline::from_config(cfg)?.run()?;
    if let Some(p) = &cfg.run.stats {
        write_json(&cfg.resolve(p), &out.stats)?;
    }
    Ok(out)
}

/// Throughput run over `n_frames`: pacing off, no queue evictions, so
/// every frame is processed and the fps figure is sustained throughput.
/// The fps floor is checked separately by [`check_fps_floor`].
pub fn cmd_bench(cfg: &PipelineConfig, n_frames: u64) -> Result<RunStats, CliError> {
    if n_frames == 0 {
        return Err(CliError::EmptyBench);
    }
    let mut cfg = cfg.clone();
    cfg.input.realtime = false;
    cfg.queue.policy = QueuePolicy::Block;
    cfg.run.max_frames = Some(n_frames);
    cfg.run.duration_s = None;
    match cfg.input.kind {
        InputKind::Synthetic => cfg.input.frames = Some(n_frames),
        InputKind::Replay => cfg.input.looping = true,
    }
    let out = cmd_run(&cfg)?;
    if out.stats.frames_processed == 0 {
        return Err(CliError::EmptyBench);
    }
    Ok(out.stats)
}

pub fn check_fps_floor(stats: &RunStats, floor: f64) -> Result<(), CliError> {
    if stats.fps < floor {
        return Err(CliError::BelowFpsFloor { fps: stats.fps, floor });
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    pub out_dir: Option<PathBuf>,
    /// Run the configured backends for samples without files.
    pub use_backends: bool,
    pub original_model: Option<PathBuf>,
    pub quantized_model: Option<PathBuf>,
}

pub fn cmd_evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> Result<EvalReport, CliError> {
    if !args.manifest.exists() {
        return Err(CliError::FileMissing(args.manifest.clone()));
    }
    let manifest = DatasetManifest::load(&args.manifest).map_err(EvalError::from)?;
    let mut backends = EvalBackends::default();
    if args.use_backends {
        backends.detector = Some(
            build_detector(&cfg.backends.detect, &cfg.base_dir).map_err(PipelineError::BackendLoad)?,
        );
        backends.depth = Some(
            build_depth_estimator(&cfg.backends.depth, &cfg.base_dir).map_err(PipelineError::BackendLoad)?,
        );
    }
    let opts = EvalOptions {
        matching: MatchConfig {
            iou_threshold: cfg.evaluate.iou_threshold,
        },
        curve_points: cfg.evaluate.curve_points,
        map50_95: cfg.evaluate.map50_95,
        postprocess: cfg.postprocess,
    };
    let mut report = evaluate(&manifest, &mut backends, &opts)?;
    if let (Some(o), Some(q)) = (&args.original_model, &args.quantized_model) {
        report.model_sizes = Some(cmd_report_models(o, q)?);
    }
    if let Some(dir) = &args.out_dir {
        let classes = manifest.classes().map_err(EvalError::from)?;
        write_report(&report, &classes, dir)?;
    }
    Ok(report)
}

pub fn cmd_report_models(original: &Path, quantized: &Path) -> Result<crate::eval::ModelSizeReport, CliError> {
    for p in [original, quantized] {
        if !p.is_file() {
            return Err(CliError::FileMissing(p.to_path_buf()));
        }
    }
    Ok(compare_model_files(original, quantized)?)
}
