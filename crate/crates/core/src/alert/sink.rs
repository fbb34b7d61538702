//! Alert delivery. Each sink runs on its own thread behind a bounded
//! drop-oldest queue, so a slow or failing sink never stalls the pipeline
//! or other sinks.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use super::AlertEvent;
use crate::types::ClassList;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink {sink}: {message}")]
    SinkFailure { sink: String, message: String },
}

impl SinkError {
    pub fn failure(sink: &str, message: impl ToString) -> Self {
        SinkError::SinkFailure {
            sink: sink.to_string(),
            message: message.to_string(),
        }
    }
}

pub trait AlertSink: Send {
    fn name(&self) -> &str;
    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError>;
    fn flush(&mut self) -> Result<(), SinkError> {
        Ok(())
    }
}

/// One event-trace line, tab separated:
/// `ts_ns frame_id class_name depth_m confidence modality`.
pub fn format_trace_line(event: &AlertEvent, classes: &ClassList) -> String {
    format!(
        "{}\t{}\t{}\t{:.3}\t{:.3}\t{}\n",
        event.timestamp_ns,
        event.frame_id,
        classes.name(event.class_id),
        event.depth_m,
        event.confidence,
        event.modality_hint.as_str()
    )
}

/// Writes the line-delimited event trace.
pub struct TraceSink<W: Write + Send> {
    out: W,
    classes: ClassList,
}

impl TraceSink<BufWriter<File>> {
    pub fn create(path: &Path, classes: ClassList) -> std::io::Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?), classes))
    }
}

impl<W: Write + Send> TraceSink<W> {
    pub fn new(out: W, classes: ClassList) -> Self {
        Self { out, classes }
    }
}

impl<W: Write + Send> AlertSink for TraceSink<W> {
    fn name(&self) -> &str {
        "trace"
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError> {
        self.out
            .write_all(format_trace_line(event, &self.classes).as_bytes())
            .map_err(|e| SinkError::failure("trace", e))
    }

    fn flush(&mut self) -> Result<(), SinkError> {
        self.out.flush().map_err(|e| SinkError::failure("trace", e))
    }
}

/// Human-readable alerts on stdout.
pub struct ConsoleSink {
    classes: ClassList,
}

impl ConsoleSink {
    pub fn new(classes: ClassList) -> Self {
        Self { classes }
    }
}

impl AlertSink for ConsoleSink {
    fn name(&self) -> &str {
        "console"
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError> {
        println!(
            "[frame {}] {} ahead at {:.1} m ({})",
            event.frame_id,
            self.classes.name(event.class_id),
            event.depth_m,
            event.modality_hint.as_str()
        );
        Ok(())
    }
}

/// Boundary to a text-to-speech engine.
pub trait SpeechAdapter: Send {
    fn speak(&mut self, text: &str) -> Result<(), String>;
}

/// Stand-in adapter that logs the utterance.
pub struct LogSpeech;

impl SpeechAdapter for LogSpeech {
    fn speak(&mut self, text: &str) -> Result<(), String> {
        info!("speak: {text}");
        Ok(())
    }
}

/// Announces the class name of each alert.
pub struct SpeechSink<A: SpeechAdapter> {
    adapter: A,
    classes: ClassList,
}

impl<A: SpeechAdapter> SpeechSink<A> {
    pub fn new(adapter: A, classes: ClassList) -> Self {
        Self { adapter, classes }
    }

    pub fn utterance(&self, event: &AlertEvent) -> String {
        format!("{} ahead", self.classes.name(event.class_id))
    }
}

impl<A: SpeechAdapter> AlertSink for SpeechSink<A> {
    fn name(&self) -> &str {
        "speech"
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError> {
        let text = self.utterance(event);
        self.adapter
            .speak(&text)
            .map_err(|e| SinkError::failure("speech", e))
    }
}

/// Collects events in memory; handy for embedding and tests.
#[derive(Clone, Default)]
pub struct MemorySink {
    events: Arc<Mutex<Vec<AlertEvent>>>,
}

impl MemorySink {
    pub fn events(&self) -> Vec<AlertEvent> {
        self.events.lock().unwrap().clone()
    }
}

impl AlertSink for MemorySink {
    fn name(&self) -> &str {
        "memory"
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError> {
        self.events.lock().unwrap().push(*event);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SinkCounters {
    pub sink: String,
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub failed: u64,
}

/// Per-sink outcome of one [`deliver_all`] call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeliveryStats {
    pub sink: String,
    pub accepted: u64,
    pub dropped: u64,
}

struct Queue {
    buf: VecDeque<AlertEvent>,
    closed: bool,
}

struct Shared {
    queue: Mutex<Queue>,
    ready: Condvar,
    capacity: usize,
    offered: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
    failed: AtomicU64,
}

/// A sink running on its own thread behind a bounded queue.
pub struct SinkHandle {
    name: String,
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

impl SinkHandle {
    pub fn spawn(mut sink: Box<dyn AlertSink>, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let name = sink.name().to_string();
        let shared = Arc::new(Shared {
            queue: Mutex::new(Queue {
                buf: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity,
            offered: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            failed: AtomicU64::new(0),
        });
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name(format!("sink-{name}"))
            .spawn(move || {
                let s = worker_shared;
                loop {
                    let next = {
                        let mut q = s.queue.lock().unwrap();
                        loop {
                            if let Some(ev) = q.buf.pop_front() {
                                break Some(ev);
                            }
                            if q.closed {
                                break None;
                            }
                            q = s.ready.wait(q).unwrap();
                        }
                    };
                    let Some(ev) = next else { break };
                    match sink.deliver(&ev) {
                        Ok(()) => s.delivered.fetch_add(1, Ordering::Relaxed),
                        Err(e) => {
                            warn!("{e}");
                            s.failed.fetch_add(1, Ordering::Relaxed)
                        }
                    };
                }
                if let Err(e) = sink.flush() {
                    warn!("{e}");
                }
            })
            .expect("spawn sink thread");
        Self {
            name,
            shared,
            worker: Some(worker),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Enqueues without blocking. Returns true if an older event was
    /// evicted to make room.
    pub fn offer(&self, event: AlertEvent) -> bool {
        let s = &self.shared;
        s.offered.fetch_add(1, Ordering::Relaxed);
        let evicted = {
            let mut q = s.queue.lock().unwrap();
            let evicted = if q.buf.len() >= s.capacity {
                q.buf.pop_front();
                true
            } else {
                false
            };
            q.buf.push_back(event);
            evicted
        };
        if evicted {
            s.dropped.fetch_add(1, Ordering::Relaxed);
        }
        s.ready.notify_one();
        evicted
    }

    pub fn counters(&self) -> SinkCounters {
        let s = &self.shared;
        SinkCounters {
            sink: self.name.clone(),
            offered: s.offered.load(Ordering::Relaxed),
            delivered: s.delivered.load(Ordering::Relaxed),
            dropped: s.dropped.load(Ordering::Relaxed),
            failed: s.failed.load(Ordering::Relaxed),
        }
    }

    /// Drains the queue and stops the worker, waiting at most `deadline`.
    /// Events still queued when the deadline passes are counted as dropped.
    pub fn close(mut self, deadline: Duration) -> SinkCounters {
        self.shutdown(deadline);
        self.counters()
    }

    fn shutdown(&mut self, deadline: Duration) {
        {
            let mut q = self.shared.queue.lock().unwrap();
            q.closed = true;
        }
        self.shared.ready.notify_all();
        let Some(worker) = self.worker.take() else { return };
        let until = Instant::now() + deadline;
        while !worker.is_finished() && Instant::now() < until {
            std::thread::sleep(Duration::from_millis(1));
        }
        if worker.is_finished() {
            let _ = worker.join();
        } else {
            let mut q = self.shared.queue.lock().unwrap();
            let left = q.buf.len() as u64;
            q.buf.clear();
            self.shared.dropped.fetch_add(left, Ordering::Relaxed);
            warn!("sink {} missed shutdown deadline; dropped {left} queued events", self.name);
        }
    }
}

impl Drop for SinkHandle {
    fn drop(&mut self) {
        if self.worker.is_some() {
            self.shutdown(Duration::from_secs(1));
        }
    }
}

/// Offers every event to every sink.
pub fn deliver_all(events: &[AlertEvent], sinks: &[SinkHandle]) -> Vec<DeliveryStats> {
    sinks
        .iter()
        .map(|sink| {
            let mut stats = DeliveryStats {
                sink: sink.name().to_string(),
                ..Default::default()
            };
            for ev in events {
                stats.accepted += 1;
                if sink.offer(*ev) {
                    stats.dropped += 1;
                }
            }
            stats
        })
        .collect()
}
