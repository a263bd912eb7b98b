//! Deterministic discrete-event network simulator.
//!
//! One link model (latency, uniform jitter, bandwidth, Bernoulli loss) is
//! shared by every endpoint pair. Deliveries per directed pair are FIFO.

mod event;
mod message;
mod prng;
mod sim;
mod time;
pub mod trace_io;

pub use event::{Event, EventKind, Trace};
pub use message::{FieldValue, Message, HEADER_BYTES};
pub use prng::{mix64, Prng};
pub use sim::{
    Action, Bandwidth, Handler, HandlerError, Input, LogLevel, NetworkParams, Simulation, DEFAULT_STEP_BUDGET,
};
pub use time::{Duration, ParseDurationError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("virtual time overflow")]
    TimeOverflow,
    #[error("empty range for random draw")]
    EmptyRange,
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),
    #[error("endpoint `{0}` already attached")]
    DuplicateEndpoint(String),
    #[error("endpoint `{0}` is not attached")]
    UnknownEndpoint(String),
    #[error("runaway simulation: step budget {budget} exceeded; last events: {}", summarize(.last_events))]
    Runaway { budget: u64, last_events: Vec<Event> },
}

fn summarize(events: &[Event]) -> String {
    events.iter().map(|e| format!("#{}@{}:{}", e.seq, e.time.as_nanos(), e.kind)).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests;
