use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::netsim::{Duration, Event, EventKind, Message, Trace};

use super::compile::{enabled_transitions, CompiledSpec, Observation, Vars};
use super::expr::{eval_guard, Env, Ref};
use super::model::Pattern;
use super::value::Value;

/// Attribute marking provenance `ServiceLog` events written at t=0.
pub const PROVENANCE: &str = "provenance";

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    /// `event_seq` is the earliest violating event.
    Fail {
        property: String,
        event_seq: u64,
        trace: Arc<Trace>,
    },
    Inconclusive {
        reason: String,
    },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail { .. } => "fail",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn property(&self) -> Option<&str> {
        match self {
            Verdict::Fail { property, .. } => Some(property),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Fail { property, event_seq, .. } => write!(f, "fail({property} at seq {event_seq})"),
            Verdict::Inconclusive { reason } => write!(f, "inconclusive({reason})"),
        }
    }
}

/// Verdict without the trace attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckResult {
    Pass,
    Fail { property: String, event_seq: u64 },
    Inconclusive { reason: String },
}

impl CheckResult {
    pub fn with_trace(self, trace: &Trace) -> Verdict {
        self.with_shared(Arc::new(trace.clone()))
    }

    pub fn with_shared(self, trace: Arc<Trace>) -> Verdict {
        match self {
            CheckResult::Pass => Verdict::Pass,
            CheckResult::Fail { property, event_seq } => Verdict::Fail { property, event_seq, trace },
            CheckResult::Inconclusive { reason } => Verdict::Inconclusive { reason },
        }
    }

    pub fn property(&self) -> Option<&str> {
        match self {
            CheckResult::Fail { property, .. } => Some(property),
            _ => None,
        }
    }
}

/// Which protocol role each endpoint plays, and which roles are driven by a
/// tester (and therefore replayed from its recorded transitions).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleMap {
    endpoints: HashMap<String, String>,
    testers: HashSet<String>,
}

impl RoleMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, endpoint: &str, role: &str, tester: bool) {
        self.endpoints.insert(endpoint.to_string(), role.to_string());
        if tester {
            self.testers.insert(role.to_string());
        }
    }

    pub fn role_of(&self, endpoint: &str) -> Option<&str> {
        self.endpoints.get(endpoint).map(String::as_str)
    }

    pub fn endpoint_of(&self, role: &str) -> Option<&str> {
        self.endpoints.iter().find(|(_, r)| *r == role).map(|(e, _)| e.as_str())
    }

    pub fn is_tester(&self, role: &str) -> bool {
        self.testers.contains(role)
    }

    /// Reads provenance events when present. Otherwise endpoints are
    /// assumed to be named after roles, and a role counts as tester-driven
    /// when its endpoint records transitions of that role.
    pub fn from_trace(compiled: &CompiledSpec, trace: &Trace) -> RoleMap {
        let mut map = RoleMap::new();
        for e in trace.iter().filter(|e| e.kind == EventKind::ServiceLog && e.attr(PROVENANCE) == Some("service")) {
            if let (Some(svc), Some(role)) = (e.attr("service"), e.attr("protocol_role")) {
                if compiled.has_role(role) {
                    map.bind(svc, role, matches!(e.attr("service_role"), Some("tester") | Some("fuzzer")));
                }
            }
        }
        if !map.endpoints.is_empty() {
            return map;
        }
        for role in &compiled.spec().roles {
            let drives = trace.iter().any(|e| {
                e.kind == EventKind::StateTransition
                    && e.src.as_deref() == Some(role.name.as_str())
                    && e.attr("transition").and_then(|t| compiled.transition(t)).is_some_and(|t| t.role == role.name)
            });
            map.bind(&role.name, &role.name, drives);
        }
        map
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Evaluate only this property id; other properties and structural
    /// failures are ignored.
    pub only_property: Option<String>,
    /// Skip failures attributable to this role's own behaviour: safety
    /// properties scoped to its sends, timed properties it triggers, and
    /// unexpected deliveries to it.
    pub ignore_role: Option<String>,
    /// Keep checking after the first violation, remembering the first
    /// violation of each property.
    pub collect_all: bool,
}

#[derive(Debug, Clone)]
struct RoleState {
    state: String,
    vars: Vars,
}

#[derive(Debug, Clone)]
struct Obligation {
    prop: usize,
    trig_seq: u64,
    deadline: Duration,
    trig_msg: Option<Message>,
}

struct PatternEnv<'a> {
    msg: Option<&'a Message>,
    trig: Option<&'a Message>,
    roles: &'a HashMap<String, RoleState>,
}

impl Env for PatternEnv<'_> {
    fn get(&self, r: &Ref) -> Option<Value> {
        match r {
            Ref::Msg(f) => self.msg.and_then(|m| m.get(f)).map(Value::from_field),
            Ref::Trig(f) => self.trig.and_then(|m| m.get(f)).map(Value::from_field),
            Ref::RoleVar(role, v) => self.roles.get(role).and_then(|s| s.vars.get(v)).cloned(),
            Ref::Var(_) | Ref::Out(_) => None,
        }
    }
}

/// Incremental trace checker. Feed events in seq order, then call
/// [`TraceChecker::finish`].
pub struct TraceChecker {
    compiled: Arc<CompiledSpec>,
    roles: RoleMap,
    options: CheckOptions,
    replay: HashMap<String, RoleState>,
    obligations: Vec<Obligation>,
    violations: IndexMap<String, u64>,
    last: Option<(u64, Duration)>,
    warnings: Vec<String>,
}

impl TraceChecker {
    pub fn new(compiled: Arc<CompiledSpec>, roles: RoleMap, options: CheckOptions) -> Self {
        let replay = compiled
            .spec()
            .roles
            .iter()
            .map(|r| {
                (r.name.clone(), RoleState { state: r.initial().to_string(), vars: compiled.initial_vars(&r.name) })
            })
            .collect();
        TraceChecker {
            compiled,
            roles,
            options,
            replay,
            obligations: Vec::new(),
            violations: IndexMap::new(),
            last: None,
            warnings: Vec::new(),
        }
    }

    pub fn roles(&self) -> &RoleMap {
        &self.roles
    }

    /// Replayed state of a role.
    pub fn role_state(&self, role: &str) -> Option<&str> {
        self.replay.get(role).map(|s| s.state.as_str())
    }

    pub fn role_vars(&self, role: &str) -> Option<&Vars> {
        self.replay.get(role).map(|s| &s.vars)
    }

    /// Earliest violation seen so far.
    pub fn violation(&self) -> Option<(&str, u64)> {
        self.violations.first().map(|(p, s)| (p.as_str(), *s))
    }

    /// First violation of each property, in detection order.
    pub fn violations(&self) -> impl Iterator<Item = (&str, u64)> {
        self.violations.iter().map(|(p, s)| (p.as_str(), *s))
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn wants(&self, property: &str) -> bool {
        self.options.only_property.as_deref().is_none_or(|p| p == property)
    }

    fn report(&mut self, property: &str, seq: u64) {
        if self.wants(property) && !self.violations.contains_key(property) {
            self.violations.insert(property.to_string(), seq);
        }
    }

    fn done(&self) -> bool {
        !self.options.collect_all && !self.violations.is_empty()
    }

    fn ignored_src(&self, p: &Pattern) -> bool {
        self.options.ignore_role.is_some() && p.src == self.options.ignore_role
    }

    fn role_matches(&self, want: &Option<String>, endpoint: &Option<String>) -> bool {
        match want {
            None => true,
            Some(role) => endpoint.as_deref().and_then(|e| self.roles.role_of(e)) == Some(role.as_str()),
        }
    }

    fn matches(&mut self, p: &Pattern, e: &Event, msg: Option<&Message>, trig: Option<&Message>) -> bool {
        if !p.kinds.is_empty() && !p.kinds.contains(&e.kind) {
            return false;
        }
        if !self.role_matches(&p.src, &e.src) || !self.role_matches(&p.dst, &e.dst) {
            return false;
        }
        if !p.msg_types.is_empty() && !msg.is_some_and(|m| p.msg_types.contains(&m.msg_type)) {
            return false;
        }
        match &p.condition {
            None => true,
            Some(c) => {
                let env = PatternEnv { msg, trig, roles: &self.replay };
                match eval_guard(c, &env) {
                    Ok(b) => b,
                    Err(err) => {
                        self.warnings.push(format!("seq {}: condition `{c}` not evaluated: {err}", e.seq));
                        false
                    }
                }
            }
        }
    }

    fn apply_snapshot(&mut self, role: &str, e: &Event) {
        let Some(to) = e.attr("to") else { return };
        let Some(decl) = self.compiled.role(role) else { return };
        let mut vars = self.replay[role].vars.clone();
        for v in &decl.variables {
            if let Some(text) = e.attr(&format!("var.{}", v.name)) {
                match Value::parse_as(v.ty, text) {
                    Some(val) => {
                        vars.insert(v.name.clone(), val);
                    }
                    None => self.warnings.push(format!("seq {}: bad value `{text}` for {role}.{}", e.seq, v.name)),
                }
            }
        }
        self.replay.insert(role.to_string(), RoleState { state: to.to_string(), vars });
    }

    fn replay_model(&mut self, role: &str, e: &Event, obs: Observation<'_>, msg: Option<&Message>) {
        let compiled = self.compiled.clone();
        let rs = &self.replay[role];
        let enabled = enabled_transitions(&compiled, role, &rs.state, &rs.vars, obs);
        let Some(t) = enabled.first() else { return };
        let mut vars = rs.vars.clone();
        // Only assignments matter for replay; unknown free fields are left unset.
        if let Err(err) = compiled.execute(t, &mut vars, msg, &mut |_| None) {
            self.warnings.push(format!("seq {}: replay of {} stopped early: {err}", e.seq, t.id));
        }
        self.replay.insert(role.to_string(), RoleState { state: t.to.clone(), vars });
    }

    pub fn feed(&mut self, e: &Event) {
        if self.done() {
            return;
        }
        self.last = Some((e.seq, e.time));

        // 1. Obligations whose deadline passed before this event.
        let mut expired = Vec::new();
        self.obligations.retain(|o| {
            let keep = o.deadline >= e.time;
            if !keep {
                expired.push(o.prop);
            }
            keep
        });
        for p in expired {
            let id = self.compiled.spec().timed[p].id.clone();
            self.report(&id, e.seq);
        }

        // 2. Replay role state machines.
        let msg = match &e.payload {
            Some(m) => {
                if self.compiled.spec().message(&m.msg_type).is_none() {
                    self.report("unknown-message", e.seq);
                    return;
                }
                Some(self.compiled.normalize(m))
            }
            None => None,
        };
        let msg = msg.as_ref();
        let src_role = e.src.as_deref().and_then(|s| self.roles.role_of(s)).map(str::to_string);
        let dst_role = e.dst.as_deref().and_then(|d| self.roles.role_of(d)).map(str::to_string);
        match e.kind {
            EventKind::StateTransition => {
                if let Some(role) = src_role.as_deref().filter(|r| self.roles.is_tester(r)) {
                    if e.attr("transition").is_some() {
                        self.apply_snapshot(role, e);
                    }
                }
            }
            EventKind::Delivered => {
                if let (Some(role), Some(m)) = (dst_role.as_deref(), msg) {
                    if self.roles.is_tester(role) {
                        let rs = &self.replay[role];
                        let found =
                            !enabled_transitions(&self.compiled, role, &rs.state, &rs.vars, Observation::Recv(m))
                                .is_empty();
                        if !found && self.options.ignore_role.as_deref() != Some(role) {
                            self.report("unexpected-message", e.seq);
                        }
                    } else {
                        self.replay_model(role, e, Observation::Recv(m), Some(m));
                    }
                }
            }
            EventKind::TimerFired => {
                if let (Some(role), Some(id)) = (src_role.as_deref(), e.attr("timer")) {
                    if !self.roles.is_tester(role) {
                        self.replay_model(role, e, Observation::Timer(id), None);
                    }
                }
            }
            _ => {}
        }

        let compiled = self.compiled.clone();
        let spec = compiled.spec();

        // 3. Responses discharge earlier obligations.
        let open = std::mem::take(&mut self.obligations);
        let mut kept = Vec::with_capacity(open.len());
        for o in open {
            let response = &spec.timed[o.prop].response;
            let hit = o.trig_seq < e.seq && self.matches(response, e, msg, o.trig_msg.as_ref());
            if !hit {
                kept.push(o);
            }
        }
        self.obligations = kept;

        // 4. Safety, against post-event state.
        for s in &spec.safety {
            if !self.wants(&s.id) || self.ignored_src(&s.scope) || self.violations.contains_key(&s.id) {
                continue;
            }
            if self.matches(&s.scope, e, msg, None) {
                let env = PatternEnv { msg, trig: None, roles: &self.replay };
                match eval_guard(&s.predicate, &env) {
                    Ok(true) => {}
                    Ok(false) => self.report(&s.id, e.seq),
                    Err(err) => self.warnings.push(format!("seq {}: {} not evaluated: {err}", e.seq, s.id)),
                }
            }
        }

        // 5. New timed obligations.
        for (i, t) in spec.timed.iter().enumerate() {
            if !self.wants(&t.id) || self.ignored_src(&t.trigger) {
                continue;
            }
            if self.matches(&t.trigger, e, msg, None) {
                let deadline = Duration::from_nanos(e.time.as_nanos().saturating_add(t.deadline.as_nanos()));
                self.obligations.push(Obligation { prop: i, trig_seq: e.seq, deadline, trig_msg: msg.cloned() });
            }
        }
    }

    pub fn finish(&self) -> CheckResult {
        if let Some((p, s)) = self.violation() {
            return CheckResult::Fail { property: p.to_string(), event_seq: s };
        }
        let Some((last_seq, last_time)) = self.last else {
            return CheckResult::Pass;
        };
        if let Some(o) = self.obligations.iter().find(|o| o.deadline <= last_time) {
            let id = &self.compiled.spec().timed[o.prop].id;
            if self.wants(id) {
                return CheckResult::Fail { property: id.clone(), event_seq: last_seq };
            }
        }
        if !self.obligations.is_empty() {
            return CheckResult::Inconclusive { reason: "horizon".into() };
        }
        if self.options.only_property.is_none() {
            for role in &self.compiled.spec().roles {
                if self.roles.is_tester(&role.name)
                    && !self.compiled.is_final(&role.name, &self.replay[&role.name].state)
                {
                    return CheckResult::Inconclusive { reason: "horizon".into() };
                }
            }
        }
        CheckResult::Pass
    }
}

pub fn check_trace_with(
    compiled: &Arc<CompiledSpec>,
    trace: &Trace,
    roles: RoleMap,
    options: CheckOptions,
) -> CheckResult {
    let mut c = TraceChecker::new(compiled.clone(), roles, options);
    for e in trace.iter() {
        c.feed(e);
    }
    c.finish()
}

pub fn check_trace(compiled: &Arc<CompiledSpec>, trace: &Trace) -> Verdict {
    let roles = RoleMap::from_trace(compiled, trace);
    check_trace_with(compiled, trace, roles, CheckOptions::default()).with_trace(trace)
}

/// Checks a single property, ignoring everything else.
pub fn check_property(compiled: &Arc<CompiledSpec>, trace: &Trace, property: &str) -> CheckResult {
    let roles = RoleMap::from_trace(compiled, trace);
    let options = CheckOptions { only_property: Some(property.to_string()), ..CheckOptions::default() };
    check_trace_with(compiled, trace, roles, options)
}
