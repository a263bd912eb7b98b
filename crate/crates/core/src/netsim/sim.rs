use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Duration, Event, EventKind, Message, Prng, SimError, Trace};

/// Default guard on the number of processed queue entries per simulation.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bandwidth {
    Unlimited,
    BitsPerSec(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub latency_base: Duration,
    /// Maximum extra delay, inclusive; actual jitter is uniform on `[0, jitter]`.
    pub jitter: Duration,
    pub bandwidth: Bandwidth,
    pub loss_rate: f64,
    pub seed: u64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            latency_base: Duration::from_millis(50),
            jitter: Duration::ZERO,
            bandwidth: Bandwidth::Unlimited,
            loss_rate: 0.0,
            seed: 0,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(SimError::InvalidParams(format!("loss_rate {} outside [0, 1]", self.loss_rate)));
        }
        if self.bandwidth == Bandwidth::BitsPerSec(0) {
            return Err(SimError::InvalidParams("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Serialization delay of `size_bytes` on the link: `ceil(bits * 1e9 / bw)` ns.
    pub fn serialization_delay(&self, size_bytes: u64) -> Duration {
        match self.bandwidth {
            Bandwidth::Unlimited => Duration::ZERO,
            Bandwidth::BitsPerSec(bw) => {
                let num = size_bytes as u128 * 8 * 1_000_000_000;
                let bw = bw as u128;
                let ns = num.div_ceil(bw);
                Duration::from_nanos(u64::try_from(ns).unwrap_or(u64::MAX))
            }
        }
    }
}

/// What a handler is being woken up for.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// Explicit kick from the driver, typically once at t=0.
    Start,
    Delivered {
        seq: u64,
        from: &'a str,
        msg: &'a Message,
    },
    TimerFired {
        seq: u64,
        id: &'a str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogLevel {
    Info,
    Warn,
    Error,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Info => "info",
            LogLevel::Warn => "warn",
            LogLevel::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send {
        dst: String,
        msg: Message,
    },
    SetTimer {
        id: String,
        delay: Duration,
    },
    CancelTimer {
        id: String,
    },
    Log {
        level: LogLevel,
        message: String,
    },
    /// Recorded as a `StateTransition` event sourced at the acting endpoint.
    Transition {
        attrs: BTreeMap<String, String>,
    },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

/// Reactor attached to a simulated endpoint.
pub trait Handler {
    fn handle(&mut self, now: Duration, input: Input<'_>) -> Result<Vec<Action>, HandlerError>;
}

impl<F> Handler for F
where
    F: FnMut(Duration, Input<'_>) -> Result<Vec<Action>, HandlerError>,
{
    fn handle(&mut self, now: Duration, input: Input<'_>) -> Result<Vec<Action>, HandlerError> {
        self(now, input)
    }
}

#[derive(Debug)]
enum Pending {
    Deliver { src: String, dst: String, msg: Message },
    Timer { endpoint: String, id: String },
}

pub struct Simulation {
    params: NetworkParams,
    prng: Prng,
    clock: Duration,
    queue: BinaryHeap<Reverse<(Duration, u64)>>,
    pending: HashMap<u64, Pending>,
    next_insert: u64,
    endpoints: IndexMap<String, Box<dyn Handler>>,
    last_delivery: HashMap<(String, String), Duration>,
    timers: HashMap<(String, String), u64>,
    trace: Trace,
    stopped: bool,
    errored: Option<(String, String)>,
    steps: u64,
    step_budget: u64,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("clock", &self.clock)
            .field("endpoints", &self.endpoints.keys().collect::<Vec<_>>())
            .field("queued", &self.pending.len())
            .field("events", &self.trace.len())
            .finish()
    }
}

impl Simulation {
    pub fn new(params: NetworkParams) -> Result<Self, SimError> {
        Self::with_experiment(params, "")
    }

    pub fn with_experiment(params: NetworkParams, experiment: &str) -> Result<Self, SimError> {
        params.validate()?;
        Ok(Simulation {
            prng: Prng::new(params.seed),
            trace: Trace::new(params.clone(), experiment),
            params,
            clock: Duration::ZERO,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            next_insert: 0,
            endpoints: IndexMap::new(),
            last_delivery: HashMap::new(),
            timers: HashMap::new(),
            stopped: false,
            errored: None,
            steps: 0,
            step_budget: DEFAULT_STEP_BUDGET,
        })
    }

    pub fn set_step_budget(&mut self, budget: u64) {
        self.step_budget = budget;
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn clock(&self) -> Duration {
        self.clock
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// `(endpoint, message)` of the first handler failure, if any.
    pub fn errored(&self) -> Option<&(String, String)> {
        self.errored.as_ref()
    }

    pub fn is_idle(&mut self) -> bool {
        self.peek_time().is_none()
    }

    pub fn attach_endpoint(&mut self, name: &str, handler: Box<dyn Handler>) -> Result<(), SimError> {
        if self.endpoints.contains_key(name) {
            return Err(SimError::DuplicateEndpoint(name.to_string()));
        }
        self.endpoints.insert(name.to_string(), handler);
        Ok(())
    }

    fn require(&self, name: &str) -> Result<(), SimError> {
        if self.endpoints.contains_key(name) {
            Ok(())
        } else {
            Err(SimError::UnknownEndpoint(name.to_string()))
        }
    }

    fn record(
        &mut self,
        kind: EventKind,
        src: Option<&str>,
        dst: Option<&str>,
        payload: Option<Message>,
        attrs: BTreeMap<String, String>,
    ) -> u64 {
        let seq = self.trace.events.len() as u64;
        self.trace.events.push(Event {
            seq,
            time: self.clock,
            kind,
            src: src.map(str::to_string),
            dst: dst.map(str::to_string),
            payload,
            attrs,
        });
        seq
    }

    fn schedule(&mut self, at: Duration, entry: Pending) -> u64 {
        let id = self.next_insert;
        self.next_insert += 1;
        self.queue.push(Reverse((at, id)));
        self.pending.insert(id, entry);
        id
    }

    /// Appends a `ServiceLog` event at the current time.
    pub fn log(&mut self, endpoint: Option<&str>, attrs: BTreeMap<String, String>) {
        self.record(EventKind::ServiceLog, endpoint, None, None, attrs);
    }

    /// Appends a `PropertyViolated` event at the current time.
    pub fn record_violation(&mut self, property: &str, event_seq: u64) {
        let attrs = BTreeMap::from([
            ("property".to_string(), property.to_string()),
            ("event_seq".to_string(), event_seq.to_string()),
        ]);
        self.record(EventKind::PropertyViolated, None, None, None, attrs);
    }

    /// Loss draw first; the jitter draw is taken only for messages not dropped.
    pub fn send(&mut self, src: &str, dst: &str, msg: Message) -> Result<(), SimError> {
        self.require(src)?;
        self.require(dst)?;
        let t = self.clock;
        let dropped = self.prng.bernoulli(self.params.loss_rate);
        self.record(EventKind::Sent, Some(src), Some(dst), Some(msg.clone()), BTreeMap::new());
        if dropped {
            self.record(EventKind::Dropped, Some(src), Some(dst), Some(msg), BTreeMap::new());
            return Ok(());
        }
        let ser = self.params.serialization_delay(msg.size_bytes());
        let jitter = self.prng.in_range(0, self.params.jitter.as_nanos())?;
        let raw =
            t.checked_add(ser)?.checked_add(self.params.latency_base)?.checked_add(Duration::from_nanos(jitter))?;
        let key = (src.to_string(), dst.to_string());
        let deliver_at = match self.last_delivery.get(&key) {
            Some(last) => raw.max(last.checked_add(Duration::from_nanos(1))?),
            None => raw,
        };
        self.last_delivery.insert(key, deliver_at);
        self.schedule(deliver_at, Pending::Deliver { src: src.to_string(), dst: dst.to_string(), msg });
        Ok(())
    }

    /// Re-setting a pending id cancels it first.
    pub fn set_timer(&mut self, endpoint: &str, delay: Duration, id: &str) -> Result<(), SimError> {
        self.require(endpoint)?;
        let at = self.clock.checked_add(delay)?;
        let key = (endpoint.to_string(), id.to_string());
        if let Some(old) = self.timers.remove(&key) {
            self.pending.remove(&old);
            let attrs =
                BTreeMap::from([("timer".to_string(), id.to_string()), ("reason".to_string(), "replaced".to_string())]);
            self.record(EventKind::TimerCancelled, Some(endpoint), None, None, attrs);
        }
        let attrs = BTreeMap::from([
            ("timer".to_string(), id.to_string()),
            ("delay_ns".to_string(), delay.as_nanos().to_string()),
        ]);
        self.record(EventKind::TimerSet, Some(endpoint), None, None, attrs);
        let entry = self.schedule(at, Pending::Timer { endpoint: endpoint.to_string(), id: id.to_string() });
        self.timers.insert(key, entry);
        Ok(())
    }

    /// Cancelling a timer that is not pending is recorded with a warning
    /// attribute rather than failing: it races legitimately with firing.
    pub fn cancel_timer(&mut self, endpoint: &str, id: &str) -> Result<(), SimError> {
        self.require(endpoint)?;
        let key = (endpoint.to_string(), id.to_string());
        let mut attrs = BTreeMap::from([("timer".to_string(), id.to_string())]);
        match self.timers.remove(&key) {
            Some(entry) => {
                self.pending.remove(&entry);
            }
            None => {
                attrs.insert("warning".to_string(), "not-pending".to_string());
            }
        }
        self.record(EventKind::TimerCancelled, Some(endpoint), None, None, attrs);
        Ok(())
    }

    fn peek_time(&mut self) -> Option<Duration> {
        while let Some(Reverse((at, id))) = self.queue.peek().copied() {
            if self.pending.contains_key(&id) {
                return Some(at);
            }
            self.queue.pop();
        }
        None
    }

    pub fn next_event_time(&mut self) -> Option<Duration> {
        if self.stopped {
            None
        } else {
            self.peek_time()
        }
    }

    /// Dispatches `Input::Start` to `endpoint` at the current time.
    pub fn kick(&mut self, endpoint: &str) -> Result<(), SimError> {
        self.require(endpoint)?;
        self.dispatch(endpoint, None)
    }

    pub fn step(&mut self) -> Result<Option<Event>, SimError> {
        self.step_until(Duration::MAX)
    }

    /// Processes the next queue entry if its time is `<= horizon`.
    pub fn step_until(&mut self, horizon: Duration) -> Result<Option<Event>, SimError> {
        if self.stopped {
            return Ok(None);
        }
        let Some(at) = self.peek_time() else {
            return Ok(None);
        };
        if at > horizon {
            return Ok(None);
        }
        self.steps += 1;
        if self.steps > self.step_budget {
            let n = self.trace.events.len();
            let last = self.trace.events[n.saturating_sub(10)..].to_vec();
            return Err(SimError::Runaway { budget: self.step_budget, last_events: last });
        }
        let Reverse((at, id)) = self.queue.pop().expect("peeked entry");
        let entry = self.pending.remove(&id).expect("live entry");
        self.clock = at;
        let (endpoint, seq) = match &entry {
            Pending::Deliver { src, dst, msg } => {
                let seq = self.record(EventKind::Delivered, Some(src), Some(dst), Some(msg.clone()), BTreeMap::new());
                (dst.clone(), seq)
            }
            Pending::Timer { endpoint, id } => {
                self.timers.remove(&(endpoint.clone(), id.clone()));
                let attrs = BTreeMap::from([("timer".to_string(), id.clone())]);
                let seq = self.record(EventKind::TimerFired, Some(endpoint), None, None, attrs);
                (endpoint.clone(), seq)
            }
        };
        let event = self.trace.events[seq as usize].clone();
        self.dispatch(&endpoint, Some((seq, &entry)))?;
        Ok(Some(event))
    }

    fn dispatch(&mut self, endpoint: &str, input: Option<(u64, &Pending)>) -> Result<(), SimError> {
        let now = self.clock;
        let Some(handler) = self.endpoints.get_mut(endpoint) else {
            return Err(SimError::UnknownEndpoint(endpoint.to_string()));
        };
        let input = match input {
            None => Input::Start,
            Some((seq, Pending::Deliver { src, msg, .. })) => Input::Delivered { seq, from: src, msg },
            Some((seq, Pending::Timer { id, .. })) => Input::TimerFired { seq, id },
        };
        match handler.handle(now, input) {
            Ok(actions) => {
                for action in actions {
                    self.execute(endpoint, action)?;
                }
                Ok(())
            }
            Err(e) => {
                self.handler_failed(endpoint, &e.0);
                Ok(())
            }
        }
    }

    fn handler_failed(&mut self, endpoint: &str, message: &str) {
        let attrs = BTreeMap::from([
            ("level".to_string(), LogLevel::Error.as_str().to_string()),
            ("message".to_string(), message.to_string()),
        ]);
        self.record(EventKind::ServiceLog, Some(endpoint), None, None, attrs);
        if self.errored.is_none() {
            self.errored = Some((endpoint.to_string(), message.to_string()));
        }
    }

    fn execute(&mut self, endpoint: &str, action: Action) -> Result<(), SimError> {
        let outcome = match action {
            Action::Send { dst, msg } => self.send(endpoint, &dst, msg),
            Action::SetTimer { id, delay } => self.set_timer(endpoint, delay, &id),
            Action::CancelTimer { id } => self.cancel_timer(endpoint, &id),
            Action::Log { level, message } => {
                let attrs = BTreeMap::from([
                    ("level".to_string(), level.as_str().to_string()),
                    ("message".to_string(), message),
                ]);
                self.record(EventKind::ServiceLog, Some(endpoint), None, None, attrs);
                Ok(())
            }
            Action::Transition { attrs } => {
                self.record(EventKind::StateTransition, Some(endpoint), None, None, attrs);
                Ok(())
            }
            Action::Stop => {
                self.stopped = true;
                Ok(())
            }
        };
        match outcome {
            Err(SimError::UnknownEndpoint(name)) => {
                self.handler_failed(endpoint, &format!("action addressed unattached endpoint `{name}`"));
                Ok(())
            }
            other => other,
        }
    }

    /// Steps while the next entry is due at or before `horizon`.
    pub fn run_until(&mut self, horizon: Duration) -> Result<&Trace, SimError> {
        while self.step_until(horizon)?.is_some() {}
        Ok(&self.trace)
    }
}
