//! Debounced, rate-limited, prioritised alerting.
//!
//! Per class the engine tracks how many consecutive frames contained at
//! least one close hit and when that class last fired. A class is eligible
//! once its streak reaches `debounce_frames` and its cooldown has elapsed;
//! among eligible classes the most urgent (lowest priority value, then
//! nearest) fire, up to `max_alerts_per_frame` per frame. A class that is
//! eligible but loses out stays eligible on the next frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::ProximityHit;
use crate::types::{ClassId, ClassList, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum AlertError {
    #[error("frame id {got} does not follow {previous}")]
    NonMonotonicFrameId { previous: u64, got: u64 },
    #[error("alert policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Buzzer,
    Speech,
    Vibration,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Buzzer => "buzzer",
            Modality::Speech => "speech",
            Modality::Vibration => "vibration",
        }
    }
}

/// Default urgency by class id: heavy vehicles first, pedestrians last.
pub const DEFAULT_PRIORITIES: [u32; NUM_CLASSES] = [
    3, // person
    2, // rickshaw
    2, // rickshaw van
    1, // auto rickshaw
    0, // truck
    1, // pickup truck
    1, // private car
    2, // motorcycle
    2, // bicycle
    0, // bus
    1, // micro bus
    0, // covered van
    1, // human hauler
];

#[derive(Debug, Clone, PartialEq)]
pub struct AlertPolicy {
    pub debounce_frames: u32,
    pub cooldown_ms: u64,
    /// Lower is more urgent, indexed by class id.
    pub class_priority: [u32; NUM_CLASSES],
    pub max_alerts_per_frame: usize,
    pub modality: Modality,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        Self {
            debounce_frames: 3,
            cooldown_ms: 2000,
            class_priority: DEFAULT_PRIORITIES,
            max_alerts_per_frame: 1,
            modality: Modality::Buzzer,
        }
    }
}

impl AlertPolicy {
    pub fn validate(&self) -> Result<(), AlertError> {
        if self.debounce_frames == 0 {
            return Err(AlertError::InvalidPolicy("debounce_frames must be at least 1".into()));
        }
        Ok(())
    }

    fn cooldown_ns(&self) -> u64 {
        self.cooldown_ms.saturating_mul(1_000_000)
    }
}

/// `[alert]` config block. Priorities are overrides keyed by class name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertConfig {
    pub debounce_frames: u32,
    pub cooldown_ms: u64,
    pub class_priority: BTreeMap<String, u32>,
    pub max_alerts_per_frame: usize,
    pub modality: Modality,
}

impl Default for AlertConfig {
    fn default() -> Self {
        let p = AlertPolicy::default();
        Self {
            debounce_frames: p.debounce_frames,
            cooldown_ms: p.cooldown_ms,
            class_priority: BTreeMap::new(),
            max_alerts_per_frame: p.max_alerts_per_frame,
            modality: p.modality,
        }
    }
}

impl AlertConfig {
    pub fn to_policy(&self, classes: &ClassList) -> Result<AlertPolicy, AlertError> {
        let mut class_priority = DEFAULT_PRIORITIES;
        for (name, &p) in &self.class_priority {
            let id = classes
                .id(name)
                .map_err(|e| AlertError::InvalidPolicy(e.to_string()))?;
            class_priority[id.index()] = p;
        }
        let policy = AlertPolicy {
            debounce_frames: self.debounce_frames,
            cooldown_ms: self.cooldown_ms,
            class_priority,
            max_alerts_per_frame: self.max_alerts_per_frame,
            modality: self.modality,
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlertEvent {
    pub timestamp_ns: u64,
    pub frame_id: u64,
    pub class_id: ClassId,
    pub depth_m: f64,
    pub confidence: f64,
    pub modality_hint: Modality,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineState {
    last_frame: Option<u64>,
    streak: [u32; NUM_CLASSES],
    last_alert_ns: [Option<u64>; NUM_CLASSES],
}

impl EngineState {
    pub fn streak(&self, class: ClassId) -> u32 {
        self.streak[class.index()]
    }

    pub fn last_alert_ns(&self, class: ClassId) -> Option<u64> {
        self.last_alert_ns[class.index()]
    }
}

/// Advances the state machine by one frame.
pub fn step(
    policy: &AlertPolicy,
    state: &EngineState,
    frame_id: u64,
    hits: &[ProximityHit],
    now_ns: u64,
) -> Result<(EngineState, Vec<AlertEvent>), AlertError> {
    if let Some(previous) = state.last_frame {
        if frame_id <= previous {
            return Err(AlertError::NonMonotonicFrameId {
                previous,
                got: frame_id,
            });
        }
    }
    // nearest close hit per class
    let mut nearest: [Option<&ProximityHit>; NUM_CLASSES] = [None; NUM_CLASSES];
    for h in hits.iter().filter(|h| h.is_close) {
        let slot = &mut nearest[h.detection.class_id.index()];
        let better = match slot {
            None => true,
            Some(cur) => h
                .depth_m
                .total_cmp(&cur.depth_m)
                .then(cur.detection.confidence.total_cmp(&h.detection.confidence))
                .is_lt(),
        };
        if better {
            *slot = Some(h);
        }
    }

    let mut next = state.clone();
    next.last_frame = Some(frame_id);
    let cooldown = policy.cooldown_ns();
    let mut eligible: Vec<(u32, f64, usize, &ProximityHit)> = Vec::new();
    for c in 0..NUM_CLASSES {
        match nearest[c] {
            Some(hit) => {
                next.streak[c] = next.streak[c].saturating_add(1);
                let cooled = next.last_alert_ns[c].map_or(true, |t| now_ns.saturating_sub(t) >= cooldown);
                if next.streak[c] >= policy.debounce_frames && cooled {
                    eligible.push((policy.class_priority[c], hit.depth_m, c, hit));
                }
            }
            None => next.streak[c] = 0,
        }
    }
    eligible.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let events: Vec<AlertEvent> = eligible
        .into_iter()
        .take(policy.max_alerts_per_frame)
        .map(|(_, _, c, hit)| {
            next.last_alert_ns[c] = Some(now_ns);
            AlertEvent {
                timestamp_ns: now_ns,
                frame_id,
                class_id: hit.detection.class_id,
                depth_m: hit.depth_m,
                confidence: hit.detection.confidence,
                modality_hint: policy.modality,
            }
        })
        .collect();
    Ok((next, events))
}

/// Owns the policy and state; the single writer in a pipeline run.
#[derive(Debug, Clone)]
pub struct AlertEngine {
    policy: AlertPolicy,
    state: EngineState,
}

impl AlertEngine {
    pub fn new(policy: AlertPolicy) -> Result<Self, AlertError> {
        policy.validate()?;
        Ok(Self {
            policy,
            state: EngineState::default(),
        })
    }

    pub fn policy(&self) -> &AlertPolicy {
        &self.policy
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn step(&mut self, frame_id: u64, hits: &[ProximityHit], now_ns: u64) -> Result<Vec<AlertEvent>, AlertError> {
        let (next, events) = step(&self.policy, &self.state, frame_id, hits, now_ns)?;
        self.state = next;
        Ok(events)
    }
}
