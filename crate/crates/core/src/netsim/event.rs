use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Duration, Message, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Sent,
    Delivered,
    Dropped,
    TimerSet,
    TimerFired,
    TimerCancelled,
    StateTransition,
    PropertyViolated,
    ServiceLog,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::Sent,
        EventKind::Delivered,
        EventKind::Dropped,
        EventKind::TimerSet,
        EventKind::TimerFired,
        EventKind::TimerCancelled,
        EventKind::StateTransition,
        EventKind::PropertyViolated,
        EventKind::ServiceLog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Sent => "Sent",
            EventKind::Delivered => "Delivered",
            EventKind::Dropped => "Dropped",
            EventKind::TimerSet => "TimerSet",
            EventKind::TimerFired => "TimerFired",
            EventKind::TimerCancelled => "TimerCancelled",
            EventKind::StateTransition => "StateTransition",
            EventKind::PropertyViolated => "PropertyViolated",
            EventKind::ServiceLog => "ServiceLog",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub time: Duration,
    pub kind: EventKind,
    pub src: Option<String>,
    pub dst: Option<String>,
    pub payload: Option<Message>,
    pub attrs: BTreeMap<String, String>,
}

impl Event {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn msg_type(&self) -> Option<&str> {
        self.payload.as_ref().map(|m| m.msg_type.as_str())
    }
}

/// The totally ordered event log of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<Event>,
    pub params: NetworkParams,
    pub experiment: String,
}

impl Trace {
    pub fn new(params: NetworkParams, experiment: impl Into<String>) -> Self {
        Trace { events: Vec::new(), params, experiment: experiment.into() }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn end_time(&self) -> Duration {
        self.events.last().map(|e| e.time).unwrap_or(Duration::ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}
