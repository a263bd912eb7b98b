//! Reading and writing protocol specifications in the configuration file
//! format. The first state listed for a role is its initial state.

use indexmap::IndexMap;

use crate::config::yaml::{emit_yaml, parse_yaml};
use crate::config::{ConfigValue, ParamMap};
use crate::netsim::{Duration, EventKind};

use super::expr::{parse_expr, Expr};
use super::model::{
    ActionSpec, FieldDecl, FieldType, MessageSchema, Pattern, ProtocolSpec, RoleDecl, SafetyProperty, TimedProperty,
    Transition, Trigger, VarDecl,
};
use super::value::{Ty, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecFormatError {
    #[error("syntax error at {0}")]
    Syntax(#[from] crate::config::YamlError),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

type Result<T> = std::result::Result<T, SpecFormatError>;

fn bad<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(SpecFormatError::Invalid { path: path.into(), message: message.into() })
}

fn map<'a>(v: &'a ConfigValue, path: &str) -> Result<&'a ParamMap> {
    v.as_map().map_or_else(|| bad(path, format!("expected a map, found {}", v.type_name())), Ok)
}

fn list<'a>(v: &'a ConfigValue, path: &str) -> Result<&'a [ConfigValue]> {
    v.as_list().map_or_else(|| bad(path, format!("expected a list, found {}", v.type_name())), Ok)
}

fn string(v: &ConfigValue, path: &str) -> Result<String> {
    match v {
        ConfigValue::Str(s) => Ok(s.clone()),
        other => bad(path, format!("expected a string, found {}", other.type_name())),
    }
}

fn req<'a>(m: &'a ParamMap, key: &str, path: &str) -> Result<&'a ConfigValue> {
    m.get(key).map_or_else(|| bad(&format!("{path}.{key}"), "missing key"), Ok)
}

fn strings(v: &ConfigValue, path: &str) -> Result<Vec<String>> {
    list(v, path)?.iter().enumerate().map(|(i, s)| string(s, &format!("{path}[{i}]"))).collect()
}

fn expr(v: &ConfigValue, path: &str) -> Result<Expr> {
    match v {
        ConfigValue::Str(s) => parse_expr(s).or_else(|e| bad(path, e.to_string())),
        ConfigValue::Int(i) if *i >= 0 && *i <= u64::MAX as i128 => Ok(Expr::int(*i as u64)),
        ConfigValue::Bool(b) => Ok(Expr::Lit(Value::Bool(*b))),
        other => bad(path, format!("expected an expression, found {}", other.type_name())),
    }
}

fn reject_unknown(m: &ParamMap, allowed: &[&str], path: &str) -> Result<()> {
    match m.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => bad(&format!("{path}.{k}"), "unknown key"),
        None => Ok(()),
    }
}

fn field_decl(name: &str, v: &ConfigValue, path: &str) -> Result<FieldDecl> {
    let (ty_name, range, len) = match v {
        ConfigValue::Str(s) => (s.clone(), None, 0),
        ConfigValue::Map(m) => {
            reject_unknown(m, &["type", "range", "len"], path)?;
            let ty = string(req(m, "type", path)?, &format!("{path}.type"))?;
            let range = match m.get("range") {
                None => None,
                Some(r) => {
                    let items = list(r, &format!("{path}.range"))?;
                    let bound = |i: usize| match items.get(i).and_then(ConfigValue::as_int) {
                        Some(b) if b >= 0 && b <= u64::MAX as i128 => Ok(b as u64),
                        _ => bad(&format!("{path}.range"), "expected [min, max] with unsigned bounds"),
                    };
                    if items.len() != 2 {
                        return bad(&format!("{path}.range"), "expected [min, max]");
                    }
                    Some((bound(0)?, bound(1)?))
                }
            };
            let len = match m.get("len") {
                None => 0,
                Some(l) => match l.as_int() {
                    Some(n) if n >= 0 => n as usize,
                    _ => return bad(&format!("{path}.len"), "expected a non-negative integer"),
                },
            };
            (ty, range, len)
        }
        other => return bad(path, format!("expected a field type, found {}", other.type_name())),
    };
    let ty = FieldType::parse(&ty_name).map_or_else(|| bad(path, format!("unknown field type `{ty_name}`")), Ok)?;
    Ok(FieldDecl { name: name.into(), ty, range, len })
}

fn var_decl(name: &str, v: &ConfigValue, path: &str) -> Result<VarDecl> {
    let literal = |v: &ConfigValue, ty: Option<Ty>| -> Result<Value> {
        match (v, ty) {
            (ConfigValue::Int(i), None | Some(Ty::Int)) if *i >= 0 && *i <= u64::MAX as i128 => {
                Ok(Value::Int(*i as u64))
            }
            (ConfigValue::Bool(b), None | Some(Ty::Bool)) => Ok(Value::Bool(*b)),
            (ConfigValue::Str(s), Some(Ty::Bytes)) => {
                hex::decode(s).map(Value::Bytes).or_else(|_| bad(path, "invalid hex"))
            }
            (ConfigValue::Str(s), Some(Ty::Text)) => Ok(Value::Text(s.clone())),
            (other, _) => bad(path, format!("unsupported initial value `{other}`")),
        }
    };
    match v {
        ConfigValue::Map(m) => {
            reject_unknown(m, &["type", "init"], path)?;
            let ty = match string(req(m, "type", path)?, &format!("{path}.type"))?.as_str() {
                "int" => Ty::Int,
                "bool" => Ty::Bool,
                "bytes" => Ty::Bytes,
                "text" => Ty::Text,
                other => return bad(&format!("{path}.type"), format!("unknown variable type `{other}`")),
            };
            let init = literal(req(m, "init", path)?, Some(ty))?;
            Ok(VarDecl { name: name.into(), ty, init })
        }
        other => {
            let init = literal(other, None)?;
            Ok(VarDecl { name: name.into(), ty: init.ty(), init })
        }
    }
}

fn pattern(v: &ConfigValue, path: &str) -> Result<Pattern> {
    let m = map(v, path)?;
    reject_unknown(m, &["kinds", "src", "dst", "msg_types", "where"], path)?;
    let kinds = match m.get("kinds") {
        None => vec![],
        Some(k) => strings(k, &format!("{path}.kinds"))?
            .iter()
            .map(|s| {
                s.parse::<EventKind>().or_else(|_| bad(&format!("{path}.kinds"), format!("unknown event kind `{s}`")))
            })
            .collect::<Result<_>>()?,
    };
    let opt = |k: &str| m.get(k).map(|v| string(v, &format!("{path}.{k}"))).transpose();
    Ok(Pattern {
        kinds,
        src: opt("src")?,
        dst: opt("dst")?,
        msg_types: m
            .get("msg_types")
            .map(|v| strings(v, &format!("{path}.msg_types")))
            .transpose()?
            .unwrap_or_default(),
        condition: m.get("where").map(|v| expr(v, &format!("{path}.where"))).transpose()?,
    })
}

fn action(v: &ConfigValue, path: &str) -> Result<ActionSpec> {
    let m = map(v, path)?;
    if let Some(t) = m.get("send") {
        reject_unknown(m, &["send", "fields"], path)?;
        let fields = match m.get("fields") {
            None => vec![],
            Some(f) => map(f, &format!("{path}.fields"))?
                .iter()
                .map(|(k, e)| Ok((k.clone(), expr(e, &format!("{path}.fields.{k}"))?)))
                .collect::<Result<_>>()?,
        };
        return Ok(ActionSpec::Send { msg_type: string(t, &format!("{path}.send"))?, fields });
    }
    if let Some(id) = m.get("set_timer") {
        reject_unknown(m, &["set_timer", "delay"], path)?;
        return Ok(ActionSpec::SetTimer {
            id: string(id, &format!("{path}.set_timer"))?,
            delay: expr(req(m, "delay", path)?, &format!("{path}.delay"))?,
        });
    }
    if let Some(id) = m.get("cancel_timer") {
        reject_unknown(m, &["cancel_timer"], path)?;
        return Ok(ActionSpec::CancelTimer { id: string(id, &format!("{path}.cancel_timer"))? });
    }
    if let Some(var) = m.get("assign") {
        reject_unknown(m, &["assign", "value"], path)?;
        return Ok(ActionSpec::Assign {
            var: string(var, &format!("{path}.assign"))?,
            value: expr(req(m, "value", path)?, &format!("{path}.value"))?,
        });
    }
    bad(path, "expected one of send, set_timer, cancel_timer, assign")
}

fn transition(v: &ConfigValue, path: &str) -> Result<Transition> {
    let m = map(v, path)?;
    reject_unknown(m, &["id", "role", "from", "on", "guard", "actions", "to"], path)?;
    let s = |k: &str| string(req(m, k, path)?, &format!("{path}.{k}"));
    let trigger = match m.get("on") {
        None => Trigger::Spontaneous,
        Some(ConfigValue::Str(x)) if x == "spontaneous" => Trigger::Spontaneous,
        Some(ConfigValue::Map(t)) if t.len() == 1 => {
            let (k, val) = t.first().expect("one entry");
            let arg = string(val, &format!("{path}.on.{k}"))?;
            match k.as_str() {
                "recv" => Trigger::Recv(arg),
                "timer" => Trigger::Timer(arg),
                _ => return bad(&format!("{path}.on"), format!("unknown trigger `{k}`")),
            }
        }
        Some(_) => return bad(&format!("{path}.on"), "expected `spontaneous`, {recv: MSG} or {timer: ID}"),
    };
    let guard = m.get("guard").map(|g| expr(g, &format!("{path}.guard"))).transpose()?.unwrap_or_else(Expr::truth);
    let actions = match m.get("actions") {
        None => vec![],
        Some(a) => list(a, &format!("{path}.actions"))?
            .iter()
            .enumerate()
            .map(|(i, x)| action(x, &format!("{path}.actions[{i}]")))
            .collect::<Result<_>>()?,
    };
    Ok(Transition { id: s("id")?, role: s("role")?, from: s("from")?, trigger, guard, actions, to: s("to")? })
}

pub fn load_spec(text: &str) -> Result<ProtocolSpec> {
    let doc = parse_yaml(text)?;
    let root = map(&doc, "")?;
    reject_unknown(root, &["name", "roles", "messages", "variables", "states", "transitions", "safety", "timed"], "")?;
    let name = string(req(root, "name", "")?, "name")?;
    let role_names = strings(req(root, "roles", "")?, "roles")?;
    let states = map(req(root, "states", "")?, "states")?;
    let empty = ParamMap::new();
    let variables = match root.get("variables") {
        None => &empty,
        Some(v) => map(v, "variables")?,
    };
    for k in states.keys().chain(variables.keys()) {
        if !role_names.contains(k) {
            return bad(k, format!("`{k}` is not a declared role"));
        }
    }
    let mut roles = Vec::new();
    for r in &role_names {
        let st = match states.get(r) {
            Some(s) => strings(s, &format!("states.{r}"))?,
            None => return bad(&format!("states.{r}"), "missing states for role"),
        };
        let vars = match variables.get(r) {
            None => vec![],
            Some(v) => map(v, &format!("variables.{r}"))?
                .iter()
                .map(|(k, d)| var_decl(k, d, &format!("variables.{r}.{k}")))
                .collect::<Result<_>>()?,
        };
        roles.push(RoleDecl { name: r.clone(), states: st, variables: vars });
    }
    let messages = match root.get("messages") {
        None => vec![],
        Some(m) => map(m, "messages")?
            .iter()
            .map(|(ty, fields)| {
                let path = format!("messages.{ty}");
                let fields = map(fields, &path)?
                    .iter()
                    .map(|(f, d)| field_decl(f, d, &format!("{path}.{f}")))
                    .collect::<Result<_>>()?;
                Ok(MessageSchema { msg_type: ty.clone(), fields })
            })
            .collect::<Result<_>>()?,
    };
    let items = |key: &str| -> Result<&[ConfigValue]> {
        match root.get(key) {
            None => Ok(&[]),
            Some(v) => list(v, key),
        }
    };
    let transitions = items("transitions")?
        .iter()
        .enumerate()
        .map(|(i, t)| transition(t, &format!("transitions[{i}]")))
        .collect::<Result<_>>()?;
    let safety = items("safety")?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = format!("safety[{i}]");
            let m = map(s, &path)?;
            reject_unknown(m, &["id", "scope", "assert"], &path)?;
            Ok(SafetyProperty {
                id: string(req(m, "id", &path)?, &format!("{path}.id"))?,
                scope: pattern(req(m, "scope", &path)?, &format!("{path}.scope"))?,
                predicate: expr(req(m, "assert", &path)?, &format!("{path}.assert"))?,
            })
        })
        .collect::<Result<_>>()?;
    let timed = items("timed")?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = format!("timed[{i}]");
            let m = map(s, &path)?;
            reject_unknown(m, &["id", "trigger", "response", "deadline"], &path)?;
            let deadline_v = req(m, "deadline", &path)?;
            let deadline: Duration = crate::config::as_duration(deadline_v)
                .map_or_else(|| bad(&format!("{path}.deadline"), format!("`{deadline_v}` is not a duration")), Ok)?;
            Ok(TimedProperty {
                id: string(req(m, "id", &path)?, &format!("{path}.id"))?,
                trigger: pattern(req(m, "trigger", &path)?, &format!("{path}.trigger"))?,
                response: pattern(req(m, "response", &path)?, &format!("{path}.response"))?,
                deadline,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ProtocolSpec { name, roles, messages, transitions, safety, timed })
}

fn s(v: impl Into<String>) -> ConfigValue {
    ConfigValue::Str(v.into())
}

fn obj(entries: Vec<(&str, ConfigValue)>) -> ConfigValue {
    ConfigValue::Map(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn list_of(items: impl IntoIterator<Item = String>) -> ConfigValue {
    ConfigValue::List(items.into_iter().map(ConfigValue::Str).collect())
}

fn pattern_value(p: &Pattern) -> ConfigValue {
    let mut m = IndexMap::new();
    if !p.kinds.is_empty() {
        m.insert("kinds".into(), list_of(p.kinds.iter().map(|k| k.as_str().to_string())));
    }
    if let Some(r) = &p.src {
        m.insert("src".into(), s(r));
    }
    if let Some(r) = &p.dst {
        m.insert("dst".into(), s(r));
    }
    if !p.msg_types.is_empty() {
        m.insert("msg_types".into(), list_of(p.msg_types.iter().cloned()));
    }
    if let Some(c) = &p.condition {
        m.insert("where".into(), s(c.to_string()));
    }
    ConfigValue::Map(m)
}

fn value_literal(v: &Value) -> ConfigValue {
    match v {
        Value::Int(i) => ConfigValue::Int(*i as i128),
        Value::Bool(b) => ConfigValue::Bool(*b),
        Value::Bytes(b) => s(hex::encode(b)),
        Value::Text(t) => s(t),
    }
}

pub fn spec_to_yaml(spec: &ProtocolSpec) -> String {
    let messages = spec
        .messages
        .iter()
        .map(|m| {
            let fields = m
                .fields
                .iter()
                .map(|f| {
                    let v = if f.range.is_none() && f.len == 0 {
                        s(f.ty.name())
                    } else {
                        let mut d = IndexMap::new();
                        d.insert("type".into(), s(f.ty.name()));
                        if let Some((lo, hi)) = f.range {
                            d.insert(
                                "range".into(),
                                ConfigValue::List(vec![ConfigValue::Int(lo as i128), ConfigValue::Int(hi as i128)]),
                            );
                        }
                        if f.len > 0 {
                            d.insert("len".into(), ConfigValue::Int(f.len as i128));
                        }
                        ConfigValue::Map(d)
                    };
                    (f.name.clone(), v)
                })
                .collect();
            (m.msg_type.clone(), ConfigValue::Map(fields))
        })
        .collect();
    let variables = spec
        .roles
        .iter()
        .filter(|r| !r.variables.is_empty())
        .map(|r| {
            let vars = r
                .variables
                .iter()
                .map(|v| {
                    let d = match v.ty {
                        Ty::Int => value_literal(&v.init),
                        ty => obj(vec![("type", s(ty.to_string())), ("init", value_literal(&v.init))]),
                    };
                    (v.name.clone(), d)
                })
                .collect();
            (r.name.clone(), ConfigValue::Map(vars))
        })
        .collect();
    let states = spec.roles.iter().map(|r| (r.name.clone(), list_of(r.states.iter().cloned()))).collect();
    let transitions = spec
        .transitions
        .iter()
        .map(|t| {
            let mut m = IndexMap::new();
            m.insert("id".into(), s(&t.id));
            m.insert("role".into(), s(&t.role));
            m.insert("from".into(), s(&t.from));
            m.insert(
                "on".into(),
                match &t.trigger {
                    Trigger::Spontaneous => s("spontaneous"),
                    Trigger::Recv(x) => obj(vec![("recv", s(x))]),
                    Trigger::Timer(x) => obj(vec![("timer", s(x))]),
                },
            );
            if !t.guard.is_true_literal() {
                m.insert("guard".into(), s(t.guard.to_string()));
            }
            if !t.actions.is_empty() {
                let actions = t
                    .actions
                    .iter()
                    .map(|a| match a {
                        ActionSpec::Send { msg_type, fields } => {
                            let mut e = vec![("send", s(msg_type))];
                            if !fields.is_empty() {
                                e.push((
                                    "fields",
                                    ConfigValue::Map(
                                        fields.iter().map(|(k, x)| (k.clone(), s(x.to_string()))).collect(),
                                    ),
                                ));
                            }
                            obj(e)
                        }
                        ActionSpec::SetTimer { id, delay } => {
                            obj(vec![("set_timer", s(id)), ("delay", s(delay.to_string()))])
                        }
                        ActionSpec::CancelTimer { id } => obj(vec![("cancel_timer", s(id))]),
                        ActionSpec::Assign { var, value } => {
                            obj(vec![("assign", s(var)), ("value", s(value.to_string()))])
                        }
                    })
                    .collect();
                m.insert("actions".into(), ConfigValue::List(actions));
            }
            m.insert("to".into(), s(&t.to));
            ConfigValue::Map(m)
        })
        .collect();
    let safety = spec
        .safety
        .iter()
        .map(|p| {
            obj(vec![("id", s(&p.id)), ("scope", pattern_value(&p.scope)), ("assert", s(p.predicate.to_string()))])
        })
        .collect();
    let timed = spec
        .timed
        .iter()
        .map(|p| {
            obj(vec![
                ("id", s(&p.id)),
                ("trigger", pattern_value(&p.trigger)),
                ("response", pattern_value(&p.response)),
                ("deadline", s(p.deadline.to_string())),
            ])
        })
        .collect();
    emit_yaml(&obj(vec![
        ("name", s(&spec.name)),
        ("roles", list_of(spec.roles.iter().map(|r| r.name.clone()))),
        ("messages", ConfigValue::Map(messages)),
        ("variables", ConfigValue::Map(variables)),
        ("states", ConfigValue::Map(states)),
        ("transitions", ConfigValue::List(transitions)),
        ("safety", ConfigValue::List(safety)),
        ("timed", ConfigValue::List(timed)),
    ]))
}
