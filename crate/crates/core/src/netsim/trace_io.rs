//! JSON-lines trace encoding.
//!
//! One object per event with keys in the fixed order
//! `seq, time_ns, kind, src, dst, msg_type, fields, attrs`. Absent optionals
//! and empty attribute maps are omitted. Integer fields are JSON numbers,
//! byte strings are lowercase hex strings, text is a plain JSON string. The
//! encoding does not distinguish bytes from text, so decoding yields text and
//! callers holding a message schema re-type byte fields afterwards.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::Value;

use super::{Duration, Event, EventKind, FieldValue, Message, NetworkParams, Trace};

struct Fields<'a>(&'a IndexMap<String, FieldValue>);

impl Serialize for Fields<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            match v {
                FieldValue::Int(i) => map.serialize_entry(k, i)?,
                FieldValue::Bytes(b) => map.serialize_entry(k, &hex::encode(b))?,
                FieldValue::Text(t) => map.serialize_entry(k, t)?,
            }
        }
        map.end()
    }
}

#[derive(Serialize)]
struct Line<'a> {
    seq: u64,
    time_ns: u64,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    src: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dst: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    msg_type: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fields: Option<Fields<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attrs: Option<&'a BTreeMap<String, String>>,
}

pub fn event_to_line(e: &Event) -> String {
    let line = Line {
        seq: e.seq,
        time_ns: e.time.as_nanos(),
        kind: e.kind.as_str(),
        src: e.src.as_deref(),
        dst: e.dst.as_deref(),
        msg_type: e.payload.as_ref().map(|m| m.msg_type.as_str()),
        fields: e.payload.as_ref().map(|m| Fields(&m.fields)),
        attrs: (!e.attrs.is_empty()).then_some(&e.attrs),
    };
    serde_json::to_string(&line).expect("trace line serializes")
}

/// Every line is newline-terminated; an empty trace encodes to an empty string.
pub fn to_jsonl(trace: &Trace) -> String {
    let mut out = String::new();
    for e in &trace.events {
        out.push_str(&event_to_line(e));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

pub fn from_jsonl(text: &str) -> Result<Trace, TraceParseError> {
    let mut trace = Trace::new(NetworkParams::default(), "");
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| TraceParseError { line: idx + 1, message };
        let v: Value = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| err("expected an object".into()))?;
        let uint = |key: &str| {
            obj.get(key).and_then(Value::as_u64).ok_or_else(|| err(format!("missing or non-integer `{key}`")))
        };
        let opt_str = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_string);
        let kind: EventKind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing `kind`".into()))?
            .parse()
            .map_err(err)?;
        let payload = match opt_str("msg_type") {
            None => None,
            Some(msg_type) => {
                let mut msg = Message::new("", msg_type);
                if let Some(fields) = obj.get("fields") {
                    let fields = fields.as_object().ok_or_else(|| err("`fields` must be an object".into()))?;
                    for (k, v) in fields {
                        let value = match v {
                            Value::Number(n) => {
                                FieldValue::Int(n.as_u64().ok_or_else(|| err(format!("field `{k}` is not a u64")))?)
                            }
                            Value::String(s) => FieldValue::Text(s.clone()),
                            _ => return Err(err(format!("field `{k}` has unsupported type"))),
                        };
                        msg.set(k.clone(), value);
                    }
                }
                Some(msg)
            }
        };
        let mut attrs = BTreeMap::new();
        if let Some(a) = obj.get("attrs") {
            let a = a.as_object().ok_or_else(|| err("`attrs` must be an object".into()))?;
            for (k, v) in a {
                let v = v.as_str().ok_or_else(|| err(format!("attr `{k}` must be a string")))?;
                attrs.insert(k.clone(), v.to_string());
            }
        }
        trace.events.push(Event {
            seq: uint("seq")?,
            time: Duration::from_nanos(uint("time_ns")?),
            kind,
            src: opt_str("src"),
            dst: opt_str("dst"),
            payload,
            attrs,
        });
    }
    Ok(trace)
}
