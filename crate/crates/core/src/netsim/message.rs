use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Wire-level field value carried by a [`Message`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldValue {
    Int(u64),
    Bytes(Vec<u8>),
    Text(String),
}

impl FieldValue {
    pub fn as_int(&self) -> Option<u64> {
        match self {
            FieldValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    fn encoded_len(&self) -> u64 {
        match self {
            FieldValue::Int(_) => 8,
            FieldValue::Bytes(b) => 2 + b.len() as u64,
            FieldValue::Text(t) => 2 + t.len() as u64,
        }
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Int(v) => write!(f, "{v}"),
            FieldValue::Bytes(b) => write!(f, "{}", hex::encode(b)),
            FieldValue::Text(t) => write!(f, "{t}"),
        }
    }
}

/// Header bytes counted for every message on top of its fields.
pub const HEADER_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub protocol: String,
    pub msg_type: String,
    pub fields: IndexMap<String, FieldValue>,
    size_bytes: u64,
}

impl Message {
    pub fn new(protocol: impl Into<String>, msg_type: impl Into<String>) -> Self {
        Message {
            protocol: protocol.into(),
            msg_type: msg_type.into(),
            fields: IndexMap::new(),
            size_bytes: HEADER_BYTES,
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: FieldValue) -> Self {
        self.set(name, value);
        self
    }

    pub fn with_int(self, name: impl Into<String>, value: u64) -> Self {
        self.with(name, FieldValue::Int(value))
    }

    pub fn set(&mut self, name: impl Into<String>, value: FieldValue) {
        self.fields.insert(name.into(), value);
        self.recompute_size();
    }

    pub fn get(&self, name: &str) -> Option<&FieldValue> {
        self.fields.get(name)
    }

    pub fn int(&self, name: &str) -> Option<u64> {
        self.fields.get(name).and_then(FieldValue::as_int)
    }

    /// Encoded size: a fixed header, 8 bytes per integer, and a 2-byte length
    /// prefix plus content for byte and text strings. Always at least one byte.
    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    pub fn recompute_size(&mut self) {
        self.size_bytes = HEADER_BYTES + self.fields.values().map(FieldValue::encoded_len).sum::<u64>();
    }
}
