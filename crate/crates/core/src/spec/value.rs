use std::fmt;

use crate::netsim::FieldValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    Int,
    Bytes,
    Text,
    Bool,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Int => "int",
            Ty::Bytes => "bytes",
            Ty::Text => "text",
            Ty::Bool => "bool",
        })
    }
}

/// Runtime value of a guard expression or spec variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Int(u64),
    Bytes(Vec<u8>),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn ty(&self) -> Ty {
        match self {
            Value::Int(_) => Ty::Int,
            Value::Bytes(_) => Ty::Bytes,
            Value::Text(_) => Ty::Text,
            Value::Bool(_) => Ty::Bool,
        }
    }

    pub fn as_int(&self) -> Option<u64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn to_field(&self) -> FieldValue {
        match self {
            Value::Int(i) => FieldValue::Int(*i),
            Value::Bytes(b) => FieldValue::Bytes(b.clone()),
            Value::Text(t) => FieldValue::Text(t.clone()),
            Value::Bool(b) => FieldValue::Int(*b as u64),
        }
    }

    pub fn from_field(f: &FieldValue) -> Value {
        match f {
            FieldValue::Int(i) => Value::Int(*i),
            FieldValue::Bytes(b) => Value::Bytes(b.clone()),
            FieldValue::Text(t) => Value::Text(t.clone()),
        }
    }

    /// Inverse of `Display` for a known type.
    pub fn parse_as(ty: Ty, text: &str) -> Option<Value> {
        match ty {
            Ty::Int => text.parse().ok().map(Value::Int),
            Ty::Bytes => hex::decode(text).ok().map(Value::Bytes),
            Ty::Text => Some(Value::Text(text.to_string())),
            Ty::Bool => text.parse().ok().map(Value::Bool),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Bytes(b) => f.write_str(&hex::encode(b)),
            Value::Text(t) => f.write_str(t),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}
