use crate::netsim::{Duration, EventKind};

use super::expr::Expr;
use super::value::{Ty, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    /// Unsigned integer of the given bit width (8, 16, 32 or 64).
    Uint(u8),
    Bytes,
    Text,
}

impl FieldType {
    pub fn ty(self) -> Ty {
        match self {
            FieldType::Uint(_) => Ty::Int,
            FieldType::Bytes => Ty::Bytes,
            FieldType::Text => Ty::Text,
        }
    }

    pub fn max(self) -> u64 {
        match self {
            FieldType::Uint(64) => u64::MAX,
            FieldType::Uint(bits) => (1u64 << bits) - 1,
            _ => 0,
        }
    }

    pub fn name(self) -> String {
        match self {
            FieldType::Uint(b) => format!("u{b}"),
            FieldType::Bytes => "bytes".into(),
            FieldType::Text => "text".into(),
        }
    }

    pub fn parse(s: &str) -> Option<FieldType> {
        match s {
            "u8" => Some(FieldType::Uint(8)),
            "u16" => Some(FieldType::Uint(16)),
            "u32" => Some(FieldType::Uint(32)),
            "u64" => Some(FieldType::Uint(64)),
            "bytes" => Some(FieldType::Bytes),
            "text" => Some(FieldType::Text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub ty: FieldType,
    /// Inclusive bounds for integer fields; defaults to the full width.
    pub range: Option<(u64, u64)>,
    /// Length used when a byte-string field is left free.
    pub len: usize,
}

impl FieldDecl {
    pub fn uint(name: &str, bits: u8) -> Self {
        FieldDecl { name: name.into(), ty: FieldType::Uint(bits), range: None, len: 0 }
    }

    pub fn bytes(name: &str, len: usize) -> Self {
        FieldDecl { name: name.into(), ty: FieldType::Bytes, range: None, len }
    }

    pub fn bounds(&self) -> (u64, u64) {
        self.range.unwrap_or((0, self.ty.max()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageSchema {
    pub msg_type: String,
    pub fields: Vec<FieldDecl>,
}

impl MessageSchema {
    pub fn new(msg_type: &str, fields: Vec<FieldDecl>) -> Self {
        MessageSchema { msg_type: msg_type.into(), fields }
    }

    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub ty: Ty,
    pub init: Value,
}

impl VarDecl {
    pub fn int(name: &str, init: u64) -> Self {
        VarDecl { name: name.into(), ty: Ty::Int, init: Value::Int(init) }
    }
}

/// States and variables of one role. The first state is the initial one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleDecl {
    pub name: String,
    pub states: Vec<String>,
    pub variables: Vec<VarDecl>,
}

impl RoleDecl {
    pub fn initial(&self) -> &str {
        &self.states[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Trigger {
    Recv(String),
    Timer(String),
    Spontaneous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionSpec {
    /// Fields not listed are free and drawn within their declared range.
    Send {
        msg_type: String,
        fields: Vec<(String, Expr)>,
    },
    SetTimer {
        id: String,
        delay: Expr,
    },
    CancelTimer {
        id: String,
    },
    Assign {
        var: String,
        value: Expr,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub id: String,
    pub role: String,
    pub from: String,
    pub trigger: Trigger,
    pub guard: Expr,
    pub actions: Vec<ActionSpec>,
    pub to: String,
}

/// Event filter. Empty lists match anything; roles are matched through the
/// endpoint-to-role map of the trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pattern {
    pub kinds: Vec<EventKind>,
    pub src: Option<String>,
    pub dst: Option<String>,
    pub msg_types: Vec<String>,
    pub condition: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyProperty {
    pub id: String,
    pub scope: Pattern,
    pub predicate: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedProperty {
    pub id: String,
    pub trigger: Pattern,
    pub response: Pattern,
    pub deadline: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub name: String,
    pub roles: Vec<RoleDecl>,
    pub messages: Vec<MessageSchema>,
    pub transitions: Vec<Transition>,
    pub safety: Vec<SafetyProperty>,
    pub timed: Vec<TimedProperty>,
}

impl ProtocolSpec {
    pub fn role(&self, name: &str) -> Option<&RoleDecl> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn message(&self, msg_type: &str) -> Option<&MessageSchema> {
        self.messages.iter().find(|m| m.msg_type == msg_type)
    }

    /// Every property id, safety first, without duplicates.
    pub fn property_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for id in self.safety.iter().map(|s| s.id.as_str()).chain(self.timed.iter().map(|t| t.id.as_str())) {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids
    }
}
