//! Proximity hits to user-facing alerts.

mod engine;
mod sink;

pub use engine::{
    step, AlertConfig, AlertEngine, AlertError, AlertEvent, AlertPolicy, EngineState, Modality,
    DEFAULT_PRIORITIES,
};
pub use sink::{
    deliver_all, format_trace_line, AlertSink, ConsoleSink, DeliveryStats, LogSpeech, MemorySink,
    SinkCounters, SinkError, SinkHandle, SpeechAdapter, SpeechSink, TraceSink,
};
