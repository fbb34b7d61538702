//! The staged runtime: source, inference pair, fusion and alerting, sinks.
//!
//! Stages run on their own threads and hand off through bounded queues.
//! The queue between source and inference may evict its oldest frame;
//! every eviction is counted.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, SendTimeoutError, Sender, TrySendError};
use serde::Serialize;
use thiserror::Error;

use crate::alert::{
    AlertEngine, AlertError, AlertEvent, AlertPolicy, AlertSink, ConsoleSink, LogSpeech, SinkCounters, SinkHandle,
    SpeechSink, TraceSink,
};
use crate::config::{ConfigError, InputKind, PipelineConfig, QueuePolicy};
use crate::fusion::{fuse, FusionConfig};
use crate::infer::{build_depth_estimator, build_detector, preprocess, DepthEstimator, Detector, InferError, RawDetections};
use crate::ingest::{CaptureSource, ReplaySource, SyntheticSource};
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::types::{ClassList, DepthMap, Frame};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend load failed: {0}")]
    BackendLoad(InferError),
    #[error("frame {frame_id}: {source}")]
    Backend { frame_id: u64, source: InferError },
    #[error(transparent)]
    Alert(#[from] AlertError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Latency percentiles for one stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Percentiles {
    pub count: u64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted samples.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Keeps the most recent `LATENCY_WINDOW` samples.
#[derive(Debug, Clone, Default)]
struct LatencyWindow {
    samples: Vec<f64>,
    next: usize,
    count: u64,
}

const LATENCY_WINDOW: usize = 8192;

impl LatencyWindow {
    fn push(&mut self, d: Duration) {
        let ms = d.as_secs_f64() * 1e3;
        if self.samples.len() < LATENCY_WINDOW {
            self.samples.push(ms);
        } else {
            self.samples[self.next] = ms;
            self.next = (self.next + 1) % LATENCY_WINDOW;
        }
        self.count += 1;
    }

    fn summary(&self) -> Percentiles {
        if self.samples.is_empty() {
            return Percentiles::default();
        }
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        Percentiles {
            count: self.count,
            p50: nearest_rank(&s, 50.0),
            p95: nearest_rank(&s, 95.0),
            p99: nearest_rank(&s, 99.0),
            max: s[s.len() - 1],
        }
    }
}

/// Resident set size from `/proc/self/statm`, if available.
pub fn current_rss_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RssSample {
    pub frames: u64,
    pub rss_bytes: u64,
}

/// RSS samples at a doubling interval so the record stays small.
#[derive(Debug, Clone)]
struct RssLog {
    samples: Vec<RssSample>,
    every: u64,
}

const RSS_SAMPLES: usize = 256;

impl RssLog {
    fn new() -> Self {
        Self {
            samples: Vec::new(),
            every: 10,
        }
    }

    fn observe(&mut self, frames: u64) {
        if frames % self.every != 0 {
            return;
        }
        let Some(rss_bytes) = current_rss_bytes() else { return };
        self.samples.push(RssSample { frames, rss_bytes });
        if self.samples.len() >= RSS_SAMPLES {
            self.every *= 2;
            let every = self.every;
            self.samples.retain(|s| s.frames % every == 0);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub frames_offered: u64,
    pub frames_processed: u64,
    /// Offered but never processed: evicted from the input queue, or still
    /// in flight when a frame limit stopped the run.
    pub frames_dropped: u64,
    pub frames_malformed: u64,
    pub elapsed_s: f64,
    pub fps: f64,
    /// Per stage, keys: preprocess, depth, detect, postprocess, fusion,
    /// alert, end_to_end (capture to alert decision).
    pub latency_ms: BTreeMap<String, Percentiles>,
    pub detections: u64,
    pub close_hits: u64,
    pub skipped_boxes: u64,
    pub low_validity: u64,
    pub alerts: u64,
    pub alerts_by_class: BTreeMap<String, u64>,
    pub sinks: Vec<SinkCounters>,
    pub rss_samples: Vec<RssSample>,
    pub peak_rss_bytes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLimits {
    pub max_frames: Option<u64>,
    pub duration: Option<Duration>,
    pub drain_timeout: Duration,
    /// Sleep so frames are released at their capture timestamps.
    pub realtime: bool,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            max_frames: None,
            duration: None,
            drain_timeout: Duration::from_secs(2),
            realtime: false,
        }
    }
}

/// Everything a run needs, already constructed.
pub struct Pipeline {
    pub source: Box<dyn CaptureSource>,
    pub depth: DepthEstimator,
    pub detector: Detector,
    pub postprocess: PostprocessConfig,
    pub fusion: FusionConfig,
    pub policy: AlertPolicy,
    pub classes: ClassList,
    pub sinks: Vec<Box<dyn AlertSink>>,
    pub sink_buffer: usize,
    pub queue_depth: usize,
    pub queue_policy: QueuePolicy,
    pub limits: RunLimits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub stats: RunStats,
    pub events: Vec<AlertEvent>,
}

impl Pipeline {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let classes = cfg.class_list()?;
        let source: Box<dyn CaptureSource> = match cfg.input.kind {
            InputKind::Replay => {
                let dir = cfg.resolve(cfg.input.dir.as_deref().expect("validated"));
                let src = ReplaySource::from_dir(&dir, cfg.input.fps, cfg.input.looping)
                    .map_err(|e| PipelineError::Io {
                        path: dir.clone(),
                        message: e.to_string(),
                    })?
                    .unpaced();
                Box::new(src)
            }
            InputKind::Synthetic => Box::new(SyntheticSource::new(
                cfg.input.width,
                cfg.input.height,
                cfg.input.frames,
                cfg.input.fps,
            )),
        };
        let depth = build_depth_estimator(&cfg.backends.depth, &cfg.base_dir).map_err(PipelineError::BackendLoad)?;
        let detector = build_detector(&cfg.backends.detect, &cfg.base_dir).map_err(PipelineError::BackendLoad)?;
        let policy = cfg
            .alert
            .to_policy(&classes)
            .map_err(|e| ConfigError::Invalid {
                path: "alert".into(),
                message: e.to_string(),
            })?;
        let mut sinks: Vec<Box<dyn AlertSink>> = Vec::new();
        if let Some(p) = &cfg.sinks.trace {
            let path = cfg.resolve(p);
            let sink = TraceSink::create(&path, classes.clone()).map_err(|e| PipelineError::Io {
                path,
                message: e.to_string(),
            })?;
            sinks.push(Box::new(sink));
        }
        if cfg.sinks.console {
            sinks.push(Box::new(ConsoleSink::new(classes.clone())));
        }
        if cfg.sinks.speech {
            sinks.push(Box::new(SpeechSink::new(LogSpeech, classes.clone())));
        }
        Ok(Self {
            source,
            depth,
            detector,
            postprocess: cfg.postprocess,
            fusion: cfg.fusion,
            policy,
            classes,
            sinks,
            sink_buffer: cfg.sinks.buffer,
            queue_depth: cfg.queue.depth,
            queue_policy: cfg.queue.policy,
            limits: RunLimits {
                max_frames: cfg.run.max_frames,
                duration: cfg.run.duration_s.map(Duration::from_secs_f64),
                drain_timeout: Duration::from_secs_f64(cfg.run.drain_timeout_s),
                realtime: cfg.input.realtime,
            },
        })
    }

    pub fn run(self) -> Result<RunOutput, PipelineError> {
        run(self)
    }
}

/// A frame plus the instant it entered the pipeline.
struct Captured {
    frame: Frame,
    at: Instant,
}

struct DepthResult {
    frame_id: u64,
    map: Result<DepthMap, InferError>,
    preprocess: Duration,
    infer: Duration,
}

struct DetectResult {
    frame_id: u64,
    raw: Result<RawDetections, InferError>,
    scale: (f64, f64),
    preprocess: Duration,
    infer: Duration,
}

/// Output of the inference pair for one frame.
struct Inferred {
    captured: Captured,
    depth: DepthMap,
    raw: RawDetections,
    /// Maps detector input pixels to depth map pixels.
    scale: (f64, f64),
}

#[derive(Default)]
struct SourceReport {
    offered: u64,
    evicted: u64,
    malformed: u64,
}

struct SourceStage {
    source: Box<dyn CaptureSource>,
    tx: Sender<Captured>,
    evict: Receiver<Captured>,
    policy: QueuePolicy,
    stop: Arc<AtomicBool>,
    limits: RunLimits,
    started: Instant,
}

impl SourceStage {
    fn run(mut self) -> SourceReport {
        let mut report = SourceReport::default();
        let mut first_ts: Option<u64> = None;
        while !self.stop.load(Ordering::Relaxed) {
            if self.limits.duration.is_some_and(|d| self.started.elapsed() >= d) {
                break;
            }
            let Some(frame) = self.source.next_frame() else { break };
            if self.limits.realtime {
                let t0 = *first_ts.get_or_insert(frame.timestamp_ns);
                let due = self.started + Duration::from_nanos(frame.timestamp_ns.saturating_sub(t0));
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
            }
            report.offered += 1;
            let mut item = Captured {
                frame,
                at: Instant::now(),
            };
            match self.policy {
                QueuePolicy::Block => loop {
                    match self.tx.send_timeout(item, Duration::from_millis(5)) {
                        Ok(()) => break,
                        Err(SendTimeoutError::Timeout(back)) if !self.stop.load(Ordering::Relaxed) => item = back,
                        Err(_) => return self.finish(report),
                    }
                },
                QueuePolicy::DropOldest => loop {
                    match self.tx.try_send(item) {
                        Ok(()) => break,
                        Err(TrySendError::Full(back)) => {
                            item = back;
                            if self.evict.try_recv().is_ok() {
                                report.evicted += 1;
                            }
                        }
                        Err(TrySendError::Disconnected(_)) => return self.finish(report),
                    }
                },
            }
        }
        self.finish(report)
    }

    fn finish(self, mut report: SourceReport) -> SourceReport {
        report.malformed = self.source.malformed();
        report
    }
}

fn spawn_depth_worker(
    mut est: DepthEstimator,
) -> (Sender<Arc<Frame>>, Receiver<DepthResult>, thread::JoinHandle<()>) {
    let (tx_in, rx_in) = bounded::<Arc<Frame>>(1);
    let (tx_out, rx_out) = bounded(1);
    let h = thread::Builder::new()
        .name("depth".into())
        .spawn(move || {
            let spec = est.input_spec();
            for frame in rx_in {
                let t0 = Instant::now();
                let (map, pre) = match preprocess(&frame, &spec) {
                    Ok(tensor) => {
                        let pre = t0.elapsed();
                        (est.estimate(&tensor), pre)
                    }
                    Err(e) => (Err(e), t0.elapsed()),
                };
                let r = DepthResult {
                    frame_id: frame.id,
                    map,
                    preprocess: pre,
                    infer: t0.elapsed() - pre,
                };
                if tx_out.send(r).is_err() {
                    break;
                }
            }
        })
        .expect("spawn depth worker");
    (tx_in, rx_out, h)
}

fn spawn_detect_worker(
    mut det: Detector,
) -> (Sender<Arc<Frame>>, Receiver<DetectResult>, thread::JoinHandle<()>) {
    let (tx_in, rx_in) = bounded::<Arc<Frame>>(1);
    let (tx_out, rx_out) = bounded(1);
    let h = thread::Builder::new()
        .name("detect".into())
        .spawn(move || {
            let spec = det.input_spec();
            let scale = (spec.target_width as f64, spec.target_height as f64);
            for frame in rx_in {
                let t0 = Instant::now();
                let (raw, pre) = match preprocess(&frame, &spec) {
                    Ok(tensor) => {
                        let pre = t0.elapsed();
                        (det.detect(frame.id, &tensor), pre)
                    }
                    Err(e) => (Err(e), t0.elapsed()),
                };
                let r = DetectResult {
                    frame_id: frame.id,
                    raw,
                    scale,
                    preprocess: pre,
                    infer: t0.elapsed() - pre,
                };
                if tx_out.send(r).is_err() {
                    break;
                }
            }
        })
        .expect("spawn detect worker");
    (tx_in, rx_out, h)
}

#[derive(Default)]
struct InferenceReport {
    preprocess: LatencyWindow,
    depth: LatencyWindow,
    detect: LatencyWindow,
    error: Option<PipelineError>,
}

/// Feeds each frame to both backends and waits for both results.
fn run_inference(
    rx: Receiver<Captured>,
    tx: Sender<Inferred>,
    depth: DepthEstimator,
    detector: Detector,
    stop: Arc<AtomicBool>,
) -> InferenceReport {
    let mut report = InferenceReport::default();
    let (depth_in, depth_out, depth_h) = spawn_depth_worker(depth);
    let (det_in, det_out, det_h) = spawn_detect_worker(detector);
    for captured in rx.iter() {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let frame = Arc::new(captured.frame.clone());
        if depth_in.send(Arc::clone(&frame)).is_err() || det_in.send(frame).is_err() {
            break;
        }
        let (Ok(d), Ok(k)) = (depth_out.recv(), det_out.recv()) else { break };
        debug_assert_eq!(d.frame_id, k.frame_id);
        let frame_id = captured.frame.id;
        report.preprocess.push(d.preprocess.max(k.preprocess));
        report.depth.push(d.infer);
        report.detect.push(k.infer);
        let (map, raw) = match (d.map, k.raw) {
            (Ok(m), Ok(r)) => (m, r),
            (Err(source), _) | (_, Err(source)) => {
                report.error = Some(PipelineError::Backend { frame_id, source });
                stop.store(true, Ordering::Relaxed);
                break;
            }
        };
        let scale = (map.width() as f64 / k.scale.0, map.height() as f64 / k.scale.1);
        let item = Inferred {
            captured,
            depth: map,
            raw,
            scale,
        };
        if tx.send(item).is_err() {
            break;
        }
    }
    drop((depth_in, det_in));
    let _ = depth_h.join();
    let _ = det_h.join();
    report
}

struct DecideStage {
    rx: Receiver<Inferred>,
    postprocess: PostprocessConfig,
    fusion: FusionConfig,
    engine: AlertEngine,
    classes: ClassList,
    sinks: Vec<SinkHandle>,
    stop: Arc<AtomicBool>,
    max_frames: Option<u64>,
}

#[derive(Default)]
struct DecideReport {
    processed: u64,
    postprocess: LatencyWindow,
    fusion: LatencyWindow,
    alert: LatencyWindow,
    end_to_end: LatencyWindow,
    detections: u64,
    close_hits: u64,
    skipped_boxes: u64,
    low_validity: u64,
    events: Vec<AlertEvent>,
    alerts_by_class: BTreeMap<String, u64>,
    last_done: Option<Instant>,
    rss: Option<RssLog>,
    error: Option<PipelineError>,
}

impl DecideStage {
    fn run(mut self) -> (DecideReport, Vec<SinkHandle>) {
        let mut r = DecideReport {
            rss: Some(RssLog::new()),
            ..Default::default()
        };
        for item in self.rx.iter() {
            let t0 = Instant::now();
            let (sx, sy) = item.scale;
            let dets: Vec<_> = postprocess(&item.raw, &self.postprocess)
                .into_iter()
                .map(|mut d| {
                    d.bbox = d.bbox.scale(sx, sy);
                    d
                })
                .collect();
            let t1 = Instant::now();
            let fused = fuse(&item.depth, &dets, &self.fusion);
            let t2 = Instant::now();
            let frame = &item.captured.frame;
            let events = match self.engine.step(frame.id, &fused.hits, frame.timestamp_ns) {
                Ok(ev) => ev,
                Err(e) => {
                    r.error = Some(e.into());
                    self.stop.store(true, Ordering::Relaxed);
                    break;
                }
            };
            for ev in &events {
                for sink in &self.sinks {
                    sink.offer(*ev);
                }
                *r.alerts_by_class
                    .entry(self.classes.name(ev.class_id).to_string())
                    .or_default() += 1;
            }
            let t3 = Instant::now();
            r.postprocess.push(t1 - t0);
            r.fusion.push(t2 - t1);
            r.alert.push(t3 - t2);
            r.end_to_end.push(t3 - item.captured.at);
            r.detections += dets.len() as u64;
            r.close_hits += fused.hits.iter().filter(|h| h.is_close).count() as u64;
            r.skipped_boxes += fused.skipped_boxes as u64;
            r.low_validity += fused.low_validity as u64;
            r.events.extend(events);
            r.processed += 1;
            r.last_done = Some(t3);
            if let Some(rss) = r.rss.as_mut() {
                rss.observe(r.processed);
            }
            if self.max_frames.is_some_and(|m| r.processed >= m) {
                self.stop.store(true, Ordering::Relaxed);
                break;
            }
        }
        (r, self.sinks)
    }
}

fn run(p: Pipeline) -> Result<RunOutput, PipelineError> {
    let started = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let engine = AlertEngine::new(p.policy)?;
    let sinks: Vec<SinkHandle> = p
        .sinks
        .into_iter()
        .map(|s| SinkHandle::spawn(s, p.sink_buffer))
        .collect();

    let (frame_tx, frame_rx) = bounded::<Captured>(p.queue_depth.max(1));
    let (inferred_tx, inferred_rx) = bounded::<Inferred>(p.queue_depth.max(1));
    let evict_rx = frame_rx.clone();

    let max_frames = p.limits.max_frames;
    if max_frames == Some(0) {
        stop.store(true, Ordering::Relaxed);
    }

    let source_stage = SourceStage {
        source: p.source,
        tx: frame_tx,
        evict: evict_rx,
        policy: p.queue_policy,
        stop: Arc::clone(&stop),
        limits: p.limits,
        started,
    };
    let decide = DecideStage {
        rx: inferred_rx,
        postprocess: p.postprocess,
        fusion: p.fusion,
        engine,
        classes: p.classes.clone(),
        sinks,
        stop: Arc::clone(&stop),
        max_frames,
    };

    let (src_report, inf_report, (dec_report, sinks)) = thread::scope(|s| {
        let src = thread::Builder::new()
            .name("source".into())
            .spawn_scoped(s, move || source_stage.run())
            .expect("spawn source");
        let inf_rx = frame_rx.clone();
        let inf_stop = Arc::clone(&stop);
        let (depth, detector) = (p.depth, p.detector);
        let inf = thread::Builder::new()
            .name("inference".into())
            .spawn_scoped(s, move || run_inference(inf_rx, inferred_tx, depth, detector, inf_stop))
            .expect("spawn inference");
        let dec = thread::Builder::new()
            .name("decide".into())
            .spawn_scoped(s, move || decide.run())
            .expect("spawn decide");
        let dec_out = dec.join().expect("decide stage panicked");
        stop.store(true, Ordering::Relaxed);
        let src_out = src.join().expect("source stage panicked");
        let inf_out = inf.join().expect("inference stage panicked");
        (src_out, inf_out, dec_out)
    });

    let deadline = p.limits.drain_timeout;
    let sink_counters: Vec<SinkCounters> = sinks.into_iter().map(|s| s.close(deadline)).collect();

    if let Some(e) = inf_report.error.or(dec_report.error) {
        return Err(e);
    }

    let elapsed = dec_report
        .last_done
        .map_or_else(|| started.elapsed(), |t| t - started)
        .as_secs_f64();
    let processed = dec_report.processed;
    let mut latency = BTreeMap::new();
    latency.insert("preprocess".to_string(), inf_report.preprocess.summary());
    latency.insert("depth".to_string(), inf_report.depth.summary());
    latency.insert("detect".to_string(), inf_report.detect.summary());
    latency.insert("postprocess".to_string(), dec_report.postprocess.summary());
    latency.insert("fusion".to_string(), dec_report.fusion.summary());
    latency.insert("alert".to_string(), dec_report.alert.summary());
    latency.insert("end_to_end".to_string(), dec_report.end_to_end.summary());
    let rss_samples = dec_report.rss.map(|r| r.samples).unwrap_or_default();
    let peak_rss_bytes = rss_samples.iter().map(|s| s.rss_bytes).chain(current_rss_bytes()).max();
    let frames_dropped = src_report.offered - processed;
    debug_assert!(src_report.evicted <= frames_dropped);
    let stats = RunStats {
        frames_offered: src_report.offered,
        frames_processed: processed,
        frames_dropped,
        frames_malformed: src_report.malformed,
        elapsed_s: elapsed,
        fps: if elapsed > 0.0 { processed as f64 / elapsed } else { 0.0 },
        latency_ms: latency,
        detections: dec_report.detections,
        close_hits: dec_report.close_hits,
        skipped_boxes: dec_report.skipped_boxes,
        low_validity: dec_report.low_validity,
        alerts: dec_report.events.len() as u64,
        alerts_by_class: dec_report.alerts_by_class,
        sinks: sink_counters,
        rss_samples,
        peak_rss_bytes,
    };
    Ok(RunOutput {
        stats,
        events: dec_report.events,
    })
}
