use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use indexmap::IndexMap;

use crate::netsim::{Duration, FieldValue, Message};

use super::expr::{eval, eval_guard, typecheck, Env, EvalError, Expr, Ref, TypeScope};
use super::model::{
    ActionSpec, FieldDecl, FieldType, MessageSchema, Pattern, ProtocolSpec, RoleDecl, Transition, Trigger,
};
use super::value::{Ty, Value};

pub type Vars = IndexMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileIssue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for CompileIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("specification has {} error(s): {}", .0.len(), .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
pub struct CompileError(pub Vec<CompileIssue>);

/// A validated specification with transition tables indexed by role and
/// state. Immutable once built.
#[derive(Debug, Clone)]
pub struct CompiledSpec {
    spec: ProtocolSpec,
    warnings: Vec<CompileIssue>,
    roles: HashMap<String, usize>,
    states: Vec<HashMap<String, usize>>,
    /// (role, state) -> transition indices in declaration order.
    table: HashMap<(usize, usize), Vec<usize>>,
    /// Per-role transition indices in declaration order.
    by_role: Vec<Vec<usize>>,
}

const RESERVED: &[&str] = &["msg", "out", "trig", "true", "false"];

struct Scope<'a> {
    spec: &'a ProtocolSpec,
    own: Option<&'a RoleDecl>,
    msg: Vec<&'a MessageSchema>,
    out: Option<&'a MessageSchema>,
    trig: Vec<&'a MessageSchema>,
    peer_vars: bool,
}

fn field_in(schemas: &[&MessageSchema], field: &str, what: &str) -> Result<Ty, String> {
    if schemas.is_empty() {
        return Err(format!("`{what}.{field}` is not available here"));
    }
    let mut ty = None;
    for s in schemas {
        let f = s.field(field).ok_or_else(|| format!("message {} has no field `{field}`", s.msg_type))?;
        match ty {
            None => ty = Some(f.ty.ty()),
            Some(t) if t != f.ty.ty() => return Err(format!("field `{field}` has different types across messages")),
            _ => {}
        }
    }
    Ok(ty.expect("non-empty"))
}

impl TypeScope for Scope<'_> {
    fn type_of(&self, r: &Ref) -> Result<Ty, String> {
        let var_in = |role: &RoleDecl, v: &str| {
            role.variables
                .iter()
                .find(|d| d.name == v)
                .map(|d| d.ty)
                .ok_or_else(|| format!("role {} has no variable `{v}`", role.name))
        };
        match r {
            Ref::Var(v) => match self.own {
                Some(role) => var_in(role, v),
                None => Err(format!("bare name `{v}` needs a role prefix here")),
            },
            Ref::RoleVar(role, v) => {
                let decl = self.spec.role(role).ok_or_else(|| format!("unknown role `{role}`"))?;
                if !self.peer_vars && self.own.map(|o| o.name != *role).unwrap_or(true) {
                    return Err(format!("`{role}.{v}` refers to another role's state"));
                }
                var_in(decl, v)
            }
            Ref::Msg(f) => field_in(&self.msg, f, "msg"),
            Ref::Out(f) => field_in(&self.out.into_iter().collect::<Vec<_>>(), f, "out"),
            Ref::Trig(f) => field_in(&self.trig, f, "trig"),
        }
    }
}

struct Checker<'a> {
    spec: &'a ProtocolSpec,
    errors: Vec<CompileIssue>,
    warnings: Vec<CompileIssue>,
}

impl<'a> Checker<'a> {
    fn err(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.errors.push(CompileIssue { location: location.into(), message: message.into() });
    }

    fn warn(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(CompileIssue { location: location.into(), message: message.into() });
    }

    fn expect_type(&mut self, loc: &str, e: &Expr, scope: &Scope<'_>, want: Ty) {
        match typecheck(e, scope) {
            Ok(t) if t == want => {}
            Ok(t) => self.err(loc, format!("expected {want}, found {t} in `{e}`")),
            Err(m) => self.err(loc, m),
        }
    }

    fn declarations(&mut self) {
        let spec = self.spec;
        if spec.name.is_empty() {
            self.err("name", "must not be empty");
        }
        if spec.roles.len() < 2 {
            self.err("roles", "a protocol needs at least two roles");
        }
        for (i, r) in spec.roles.iter().enumerate() {
            let loc = format!("roles[{}]", r.name);
            if spec.roles[..i].iter().any(|o| o.name == r.name) {
                self.err(&loc, "duplicate role");
            }
            if RESERVED.contains(&r.name.as_str()) {
                self.err(&loc, "role name is reserved");
            }
            if r.states.is_empty() {
                self.err(&loc, "role needs at least one state (the first is initial)");
            }
            for (j, s) in r.states.iter().enumerate() {
                if r.states[..j].contains(s) {
                    self.err(format!("{loc}.states[{s}]"), "duplicate state");
                }
            }
            for (j, v) in r.variables.iter().enumerate() {
                let vloc = format!("{loc}.variables[{}]", v.name);
                if r.variables[..j].iter().any(|o| o.name == v.name) {
                    self.err(&vloc, "duplicate variable");
                }
                if v.init.ty() != v.ty {
                    self.err(&vloc, format!("initial value has type {}, declared {}", v.init.ty(), v.ty));
                }
            }
        }
        for (i, m) in spec.messages.iter().enumerate() {
            let loc = format!("messages[{}]", m.msg_type);
            if spec.messages[..i].iter().any(|o| o.msg_type == m.msg_type) {
                self.err(&loc, "duplicate message type");
            }
            for (j, f) in m.fields.iter().enumerate() {
                let floc = format!("{loc}.{}", f.name);
                if m.fields[..j].iter().any(|o| o.name == f.name) {
                    self.err(&floc, "duplicate field");
                }
                if let FieldType::Uint(bits) = f.ty {
                    if ![8, 16, 32, 64].contains(&bits) {
                        self.err(&floc, format!("unsupported width u{bits}"));
                    }
                }
                if let Some((lo, hi)) = f.range {
                    if !matches!(f.ty, FieldType::Uint(_)) {
                        self.err(&floc, "ranges apply to integer fields only");
                    } else if lo > hi || hi > f.ty.max() {
                        self.err(&floc, format!("range [{lo}, {hi}] does not fit {}", f.ty.name()));
                    }
                }
            }
        }
    }

    fn transition(&mut self, i: usize, t: &'a Transition) {
        let spec = self.spec;
        let loc = format!("transitions[{}]", t.id);
        if spec.transitions[..i].iter().any(|o| o.id == t.id) {
            self.err(&loc, "duplicate transition id");
        }
        let Some(role) = spec.role(&t.role) else {
            return self.err(format!("{loc}.role"), format!("unknown role `{}`", t.role));
        };
        if !role.states.contains(&t.from) {
            self.err(format!("{loc}.from"), format!("undefined state `{}`", t.from));
        }
        if !role.states.contains(&t.to) {
            self.err(format!("{loc}.to"), format!("undefined state `{}`", t.to));
        }
        let mut scope = Scope { spec, own: Some(role), msg: vec![], out: None, trig: vec![], peer_vars: false };
        match &t.trigger {
            Trigger::Recv(m) => match spec.message(m) {
                Some(schema) => scope.msg = vec![schema],
                None => self.err(format!("{loc}.trigger"), format!("undefined message `{m}`")),
            },
            Trigger::Timer(id) => {
                let set_somewhere = spec
                    .transitions
                    .iter()
                    .filter(|o| o.role == t.role)
                    .any(|o| o.actions.iter().any(|a| matches!(a, ActionSpec::SetTimer { id: x, .. } if x == id)));
                if !set_somewhere {
                    self.warn(format!("{loc}.trigger"), format!("timer `{id}` is never set by role {}", t.role));
                }
            }
            Trigger::Spontaneous => {}
        }
        self.expect_type(&format!("{loc}.guard"), &t.guard, &scope, Ty::Bool);
        for (k, a) in t.actions.iter().enumerate() {
            let aloc = format!("{loc}.actions[{k}]");
            match a {
                ActionSpec::Send { msg_type, fields } => {
                    let Some(schema) = spec.message(msg_type) else {
                        self.err(&aloc, format!("undefined message `{msg_type}`"));
                        continue;
                    };
                    for (j, (name, e)) in fields.iter().enumerate() {
                        if fields[..j].iter().any(|(o, _)| o == name) {
                            self.err(format!("{aloc}.{name}"), "field assigned twice");
                        }
                        match schema.field(name) {
                            Some(decl) => self.expect_type(&format!("{aloc}.{name}"), e, &scope, decl.ty.ty()),
                            None => {
                                self.err(format!("{aloc}.{name}"), format!("message {msg_type} has no field `{name}`"))
                            }
                        }
                    }
                    scope.out = Some(schema);
                }
                ActionSpec::SetTimer { delay, .. } => self.expect_type(&aloc, delay, &scope, Ty::Int),
                ActionSpec::CancelTimer { .. } => {}
                ActionSpec::Assign { var, value } => match role.variables.iter().find(|v| v.name == *var) {
                    Some(decl) => self.expect_type(&aloc, value, &scope, decl.ty),
                    None => self.err(&aloc, format!("role {} has no variable `{var}`", role.name)),
                },
            }
        }
    }

    fn pattern(&mut self, loc: &str, p: &'a Pattern, trig: Vec<&'a MessageSchema>) -> Vec<&'a MessageSchema> {
        let spec = self.spec;
        for (side, r) in [("src", &p.src), ("dst", &p.dst)] {
            if let Some(r) = r {
                if spec.role(r).is_none() {
                    self.err(format!("{loc}.{side}"), format!("unknown role `{r}`"));
                }
            }
        }
        let mut schemas = Vec::new();
        for m in &p.msg_types {
            match spec.message(m) {
                Some(s) => schemas.push(s),
                None => self.err(format!("{loc}.msg_types"), format!("undefined message `{m}`")),
            }
        }
        if let Some(c) = &p.condition {
            let scope = Scope { spec, own: None, msg: schemas.clone(), out: None, trig, peer_vars: true };
            self.expect_type(&format!("{loc}.where"), c, &scope, Ty::Bool);
        }
        schemas
    }

    fn properties(&mut self) {
        let spec = self.spec;
        for (i, s) in spec.safety.iter().enumerate() {
            let loc = format!("safety[{i}:{}]", s.id);
            if spec.timed.iter().any(|t| t.id == s.id) {
                self.err(&loc, "id is also used by a timed property");
            }
            let schemas = self.pattern(&format!("{loc}.scope"), &s.scope, vec![]);
            let scope = Scope { spec, own: None, msg: schemas, out: None, trig: vec![], peer_vars: true };
            self.expect_type(&format!("{loc}.assert"), &s.predicate, &scope, Ty::Bool);
        }
        for (i, t) in spec.timed.iter().enumerate() {
            let loc = format!("timed[{}]", t.id);
            if spec.timed[..i].iter().any(|o| o.id == t.id) {
                self.err(&loc, "duplicate timed property id");
            }
            if t.deadline.as_nanos() == 0 {
                self.err(format!("{loc}.deadline"), "deadline must be positive");
            }
            let trig = self.pattern(&format!("{loc}.trigger"), &t.trigger, vec![]);
            self.pattern(&format!("{loc}.response"), &t.response, trig);
        }
    }

    fn reachability(&mut self) {
        for role in &self.spec.roles {
            let Some(initial) = role.states.first() else { continue };
            let mut seen: HashSet<&str> = HashSet::from([initial.as_str()]);
            let mut queue = VecDeque::from([initial.as_str()]);
            while let Some(s) = queue.pop_front() {
                for t in self.spec.transitions.iter().filter(|t| t.role == role.name && t.from == s) {
                    if seen.insert(&t.to) {
                        queue.push_back(&t.to);
                    }
                }
            }
            for s in &role.states {
                if !seen.contains(s.as_str()) {
                    self.warnings.push(CompileIssue {
                        location: format!("roles[{}].states[{s}]", role.name),
                        message: "state is unreachable from the initial state".into(),
                    });
                }
            }
        }
    }
}

pub fn compile_spec(spec: ProtocolSpec) -> Result<CompiledSpec, CompileError> {
    let mut c = Checker { spec: &spec, errors: vec![], warnings: vec![] };
    c.declarations();
    for (i, t) in spec.transitions.iter().enumerate() {
        c.transition(i, t);
    }
    c.properties();
    c.reachability();
    if !c.errors.is_empty() {
        return Err(CompileError(c.errors));
    }
    let warnings = c.warnings;

    let roles: HashMap<String, usize> = spec.roles.iter().enumerate().map(|(i, r)| (r.name.clone(), i)).collect();
    let states: Vec<HashMap<String, usize>> =
        spec.roles.iter().map(|r| r.states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()).collect();
    let mut table: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut by_role = vec![Vec::new(); spec.roles.len()];
    for (i, t) in spec.transitions.iter().enumerate() {
        let r = roles[&t.role];
        table.entry((r, states[r][&t.from])).or_default().push(i);
        by_role[r].push(i);
    }
    Ok(CompiledSpec { spec, warnings, roles, states, table, by_role })
}

/// What a role is reacting to.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    Spontaneous,
    Recv(&'a Message),
    Timer(&'a str),
}

/// Binds a role's variables, the observed message and the last sent one.
pub struct TransitionEnv<'a> {
    pub role: &'a str,
    pub vars: &'a Vars,
    pub msg: Option<&'a Message>,
    pub out: Option<&'a Message>,
}

fn field(m: Option<&Message>, f: &str) -> Option<Value> {
    m.and_then(|m| m.get(f)).map(Value::from_field)
}

impl Env for TransitionEnv<'_> {
    fn get(&self, r: &Ref) -> Option<Value> {
        match r {
            Ref::Var(v) => self.vars.get(v).cloned(),
            Ref::RoleVar(role, v) if role == self.role => self.vars.get(v).cloned(),
            Ref::RoleVar(..) | Ref::Trig(_) => None,
            Ref::Msg(f) => field(self.msg, f),
            Ref::Out(f) => field(self.out, f),
        }
    }
}

/// Side effect of executing a transition's actions.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// `free` lists the fields that were not fixed by the specification.
    Send {
        msg: Message,
        free: Vec<(String, Value)>,
    },
    SetTimer {
        id: String,
        delay: Duration,
    },
    CancelTimer {
        id: String,
    },
}

impl CompiledSpec {
    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    pub fn warnings(&self) -> &[CompileIssue] {
        &self.warnings
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.roles.contains_key(role)
    }

    pub fn role(&self, role: &str) -> Option<&RoleDecl> {
        self.roles.get(role).map(|&i| &self.spec.roles[i])
    }

    pub fn transition(&self, id: &str) -> Option<&Transition> {
        self.spec.transitions.iter().find(|t| t.id == id)
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.spec.transitions.iter().position(|t| t.id == id)
    }

    pub fn role_transitions(&self, role: &str) -> impl Iterator<Item = (usize, &Transition)> {
        let idx = self.roles.get(role).map(|&r| self.by_role[r].as_slice()).unwrap_or(&[]);
        idx.iter().map(|&i| (i, &self.spec.transitions[i]))
    }

    /// Transitions leaving `state`, in declaration order.
    pub fn outgoing(&self, role: &str, state: &str) -> impl Iterator<Item = (usize, &Transition)> {
        let key = self.roles.get(role).and_then(|&r| self.states[r].get(state).map(|&s| (r, s)));
        let idx = key.and_then(|k| self.table.get(&k)).map(|v| v.as_slice()).unwrap_or(&[]);
        idx.iter().map(|&i| (i, &self.spec.transitions[i]))
    }

    /// A state with no outgoing transitions.
    pub fn is_final(&self, role: &str, state: &str) -> bool {
        self.outgoing(role, state).next().is_none()
    }

    pub fn initial_vars(&self, role: &str) -> Vars {
        self.role(role)
            .map(|r| r.variables.iter().map(|v| (v.name.clone(), v.init.clone())).collect())
            .unwrap_or_default()
    }

    /// Message types that `role` has a receive transition for in `state`,
    /// regardless of guards.
    pub fn receivable(&self, role: &str, state: &str) -> HashSet<&str> {
        self.outgoing(role, state)
            .filter_map(|(_, t)| match &t.trigger {
                Trigger::Recv(m) => Some(m.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Re-types decoded message fields against the schema: byte-string fields
    /// read back from text become bytes again.
    pub fn normalize(&self, msg: &Message) -> Message {
        let Some(schema) = self.spec.message(&msg.msg_type) else {
            return msg.clone();
        };
        let mut out = msg.clone();
        if out.protocol.is_empty() {
            out.protocol = self.spec.name.clone();
        }
        for decl in &schema.fields {
            if let (FieldType::Bytes, Some(FieldValue::Text(t))) = (decl.ty, msg.get(&decl.name)) {
                if let Ok(b) = hex::decode(t) {
                    out.set(decl.name.clone(), FieldValue::Bytes(b));
                }
            }
        }
        out
    }

    /// Builds a message of `msg_type`, evaluating the given field
    /// expressions and filling the others through `free`.
    pub fn build_message(
        &self,
        msg_type: &str,
        fields: &[(String, Expr)],
        env: &dyn Env,
        free: &mut dyn FnMut(&FieldDecl) -> Option<Value>,
    ) -> Result<(Message, Vec<(String, Value)>), EvalError> {
        let schema = self.spec.message(msg_type).ok_or_else(|| EvalError::Unbound(msg_type.to_string()))?;
        let mut msg = Message::new(self.spec.name.clone(), msg_type);
        let mut drawn = Vec::new();
        for decl in &schema.fields {
            let value = match fields.iter().find(|(n, _)| *n == decl.name) {
                Some((_, e)) => Some(eval(e, env)?),
                None => {
                    let v = free(decl);
                    if let Some(v) = &v {
                        drawn.push((decl.name.clone(), v.clone()));
                    }
                    v
                }
            };
            if let Some(v) = value {
                msg.fields.insert(decl.name.clone(), v.to_field());
            }
        }
        msg.recompute_size();
        Ok((msg, drawn))
    }

    /// Runs a transition's actions in order. Assignments take effect
    /// immediately; `out` refers to the latest message built so far.
    /// On error, `vars` keeps the assignments made before the failure.
    pub fn execute(
        &self,
        t: &Transition,
        vars: &mut Vars,
        msg: Option<&Message>,
        free: &mut dyn FnMut(&FieldDecl) -> Option<Value>,
    ) -> Result<Vec<Effect>, EvalError> {
        let mut effects = Vec::new();
        let mut out: Option<Message> = None;
        for a in &t.actions {
            let env = TransitionEnv { role: &t.role, vars, msg, out: out.as_ref() };
            match a {
                ActionSpec::Send { msg_type, fields } => {
                    let (m, drawn) = self.build_message(msg_type, fields, &env, free)?;
                    out = Some(m.clone());
                    effects.push(Effect::Send { msg: m, free: drawn });
                }
                ActionSpec::SetTimer { id, delay } => {
                    let d = eval(delay, &env)?.as_int().ok_or_else(|| EvalError::Type(delay.to_string()))?;
                    effects.push(Effect::SetTimer { id: id.clone(), delay: Duration::from_nanos(d) });
                }
                ActionSpec::CancelTimer { id } => effects.push(Effect::CancelTimer { id: id.clone() }),
                ActionSpec::Assign { var, value } => {
                    let v = eval(value, &env)?;
                    vars.insert(var.clone(), v);
                }
            }
        }
        Ok(effects)
    }
}

/// Guard failures caused by evaluation errors are reported in `warnings`
/// and count as false.
pub fn enabled_transitions_with_warnings<'c>(
    compiled: &'c CompiledSpec,
    role: &str,
    state: &str,
    vars: &Vars,
    obs: Observation<'_>,
) -> (Vec<&'c Transition>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let msg = match obs {
        Observation::Recv(m) => Some(m),
        _ => None,
    };
    for (_, t) in compiled.outgoing(role, state) {
        let class_ok = match (&t.trigger, obs) {
            (Trigger::Spontaneous, Observation::Spontaneous) => true,
            (Trigger::Recv(ty), Observation::Recv(m)) => *ty == m.msg_type,
            (Trigger::Timer(id), Observation::Timer(fired)) => id == fired,
            _ => false,
        };
        if !class_ok {
            continue;
        }
        let env = TransitionEnv { role, vars, msg, out: None };
        match eval_guard(&t.guard, &env) {
            Ok(true) => {
                out.push(t);
                // First match wins for concrete inputs.
                if !matches!(obs, Observation::Spontaneous) {
                    break;
                }
            }
            Ok(false) => {}
            Err(e) => warnings.push(format!("{}: guard not evaluated: {e}", t.id)),
        }
    }
    (out, warnings)
}

pub fn enabled_transitions<'c>(
    compiled: &'c CompiledSpec,
    role: &str,
    state: &str,
    vars: &Vars,
    obs: Observation<'_>,
) -> Vec<&'c Transition> {
    enabled_transitions_with_warnings(compiled, role, state, vars, obs).0
}
