//! A YAML subset: block and flow maps and lists, strings, integers,
//! decimals and booleans. Anchors, aliases, tags, nulls and multi-document
//! streams are rejected.

use indexmap::IndexMap;
use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser};
use yaml_rust2::scanner::{Marker, TScalarStyle};

use super::value::ConfigValue;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {col}: {message}")]
pub struct YamlError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

enum Frame {
    Map { entries: IndexMap<String, ConfigValue>, pending_key: Option<(String, Marker)> },
    List(Vec<ConfigValue>),
}

#[derive(Default)]
struct Builder {
    stack: Vec<Frame>,
    root: Option<ConfigValue>,
    documents: usize,
    error: Option<YamlError>,
}

fn err_at(mark: Marker, message: impl Into<String>) -> YamlError {
    YamlError { line: mark.line(), col: mark.col() + 1, message: message.into() }
}

fn plain_scalar(text: &str) -> Result<ConfigValue, String> {
    match text {
        "true" | "True" | "TRUE" => return Ok(ConfigValue::Bool(true)),
        "false" | "False" | "FALSE" => return Ok(ConfigValue::Bool(false)),
        "~" | "null" | "Null" | "NULL" | "" => return Err("null values are not supported".into()),
        _ => {}
    }
    let body = text.strip_prefix(['-', '+']).unwrap_or(text);
    if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit() || b == b'_') && body.as_bytes()[0].is_ascii_digit()
    {
        let cleaned: String = text.chars().filter(|c| *c != '_').collect();
        return cleaned.parse::<i128>().map(ConfigValue::Int).map_err(|_| format!("integer `{text}` out of range"));
    }
    if let Some(hex) = body.strip_prefix("0x") {
        if !hex.is_empty() && hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            let v = i128::from_str_radix(hex, 16).map_err(|_| format!("integer `{text}` out of range"))?;
            return Ok(ConfigValue::Int(if text.starts_with('-') { -v } else { v }));
        }
    }
    let looks_decimal = body.bytes().next().is_some_and(|b| b.is_ascii_digit() || b == b'.')
        && body.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'-' | b'+'))
        && body.bytes().any(|b| b.is_ascii_digit());
    if looks_decimal {
        if let Ok(v) = text.parse::<f64>() {
            if v.is_finite() {
                return Ok(ConfigValue::Rational(v));
            }
        }
    }
    Ok(ConfigValue::Str(text.to_string()))
}

impl Builder {
    fn fail(&mut self, e: YamlError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn push_value(&mut self, value: ConfigValue, mark: Marker) {
        match self.stack.last_mut() {
            None => self.root = Some(value),
            Some(Frame::List(items)) => items.push(value),
            Some(Frame::Map { entries, pending_key }) => match pending_key.take() {
                Some((key, key_mark)) => {
                    if entries.contains_key(&key) {
                        let e = err_at(key_mark, format!("duplicate key `{key}`"));
                        self.fail(e);
                    } else {
                        entries.insert(key, value);
                    }
                }
                None => match value {
                    ConfigValue::Str(key) => *pending_key = Some((key, mark)),
                    ConfigValue::Int(i) => *pending_key = Some((i.to_string(), mark)),
                    ConfigValue::Bool(b) => *pending_key = Some((b.to_string(), mark)),
                    _ => {
                        let e = err_at(mark, "map keys must be scalars");
                        self.fail(e);
                    }
                },
            },
        }
    }
}

impl MarkedEventReceiver for Builder {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        if self.error.is_some() {
            return;
        }
        match ev {
            Event::DocumentStart => {
                self.documents += 1;
                if self.documents > 1 {
                    self.fail(err_at(mark, "multi-document streams are not supported"));
                }
            }
            Event::Alias(_) => self.fail(err_at(mark, "aliases are not supported")),
            Event::Scalar(text, style, anchor, tag) => {
                if anchor != 0 {
                    return self.fail(err_at(mark, "anchors are not supported"));
                }
                if tag.is_some() {
                    return self.fail(err_at(mark, "tags are not supported"));
                }
                let value = if style == TScalarStyle::Plain {
                    match plain_scalar(&text) {
                        Ok(v) => v,
                        Err(m) => return self.fail(err_at(mark, m)),
                    }
                } else {
                    ConfigValue::Str(text)
                };
                self.push_value(value, mark);
            }
            Event::SequenceStart(anchor, tag) | Event::MappingStart(anchor, tag) if anchor != 0 || tag.is_some() => {
                self.fail(err_at(mark, "anchors and tags are not supported"));
            }
            Event::SequenceStart(..) => {
                if matches!(self.stack.last(), Some(Frame::Map { pending_key: None, .. })) {
                    return self.fail(err_at(mark, "map keys must be scalars"));
                }
                self.stack.push(Frame::List(Vec::new()))
            }
            Event::MappingStart(..) => {
                if matches!(self.stack.last(), Some(Frame::Map { pending_key: None, .. })) {
                    return self.fail(err_at(mark, "map keys must be scalars"));
                }
                self.stack.push(Frame::Map { entries: IndexMap::new(), pending_key: None })
            }
            Event::SequenceEnd => {
                if let Some(Frame::List(items)) = self.stack.pop() {
                    self.push_value(ConfigValue::List(items), mark);
                }
            }
            Event::MappingEnd => {
                if let Some(Frame::Map { entries, .. }) = self.stack.pop() {
                    self.push_value(ConfigValue::Map(entries), mark);
                }
            }
            _ => {}
        }
    }
}

pub fn parse_yaml(text: &str) -> Result<ConfigValue, YamlError> {
    let mut builder = Builder::default();
    let mut parser = Parser::new_from_str(text);
    parser.load(&mut builder, true).map_err(|e| YamlError {
        line: e.marker().line(),
        col: e.marker().col() + 1,
        message: e.info().to_string(),
    })?;
    if let Some(e) = builder.error {
        return Err(e);
    }
    builder.root.ok_or(YamlError { line: 1, col: 1, message: "empty document".into() })
}

/// Emits a block-style document that [`parse_yaml`] reads back to an equal
/// value. Strings are always double-quoted.
pub fn emit_yaml(value: &ConfigValue) -> String {
    let mut out = String::new();
    match value {
        ConfigValue::Map(m) if !m.is_empty() => emit_map(m, 0, &mut out),
        ConfigValue::List(l) if !l.is_empty() => emit_list(l, 0, &mut out),
        other => {
            out.push_str(&scalar(other));
            out.push('\n');
        }
    }
    out
}

fn scalar(v: &ConfigValue) -> String {
    match v {
        ConfigValue::Int(i) => i.to_string(),
        ConfigValue::Bool(b) => b.to_string(),
        ConfigValue::Rational(r) => {
            let s = format!("{r:?}");
            if s.contains(['.', 'e', 'E']) {
                s
            } else {
                format!("{s}.0")
            }
        }
        ConfigValue::Str(s) => quote(s),
        ConfigValue::Map(_) => "{}".into(),
        ConfigValue::List(_) => "[]".into(),
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn key(k: &str) -> String {
    let plain = !k.is_empty()
        && k.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && k.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && !matches!(k, "true" | "false" | "null" | "True" | "False" | "Null" | "TRUE" | "FALSE" | "NULL");
    if plain {
        k.to_string()
    } else {
        quote(k)
    }
}

fn is_nested(v: &ConfigValue) -> bool {
    match v {
        ConfigValue::Map(m) => !m.is_empty(),
        ConfigValue::List(l) => !l.is_empty(),
        _ => false,
    }
}

fn emit_map(map: &IndexMap<String, ConfigValue>, indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    for (k, v) in map {
        out.push_str(&pad);
        out.push_str(&key(k));
        out.push(':');
        emit_child(v, indent, out);
    }
}

fn emit_child(v: &ConfigValue, indent: usize, out: &mut String) {
    match v {
        ConfigValue::Map(m) if !m.is_empty() => {
            out.push('\n');
            emit_map(m, indent + 2, out);
        }
        ConfigValue::List(l) if !l.is_empty() => {
            out.push('\n');
            emit_list(l, indent + 2, out);
        }
        other => {
            out.push(' ');
            out.push_str(&scalar(other));
            out.push('\n');
        }
    }
}

fn emit_list(items: &[ConfigValue], indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    for item in items {
        out.push_str(&pad);
        out.push('-');
        match item {
            ConfigValue::Map(m) if !m.is_empty() => {
                // First entry shares the dash line; the rest align under it.
                let mut first = true;
                for (k, v) in m {
                    if first {
                        out.push(' ');
                        first = false;
                    } else {
                        out.push_str(&pad);
                        out.push_str("  ");
                    }
                    out.push_str(&key(k));
                    out.push(':');
                    emit_child(v, indent + 2, out);
                }
            }
            v if is_nested(v) => {
                out.push('\n');
                if let ConfigValue::List(l) = v {
                    emit_list(l, indent + 2, out);
                }
            }
            other => {
                out.push(' ');
                out.push_str(&scalar(other));
                out.push('\n');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_scalars_and_nesting() {
        let v = parse_yaml("a: 1\nb: 0.5\nc: true\nd: hello\ne: \"42\"\nf: [1, 2]\ng:\n  h: -7\n").unwrap();
        let m = v.as_map().unwrap();
        assert_eq!(m["a"], ConfigValue::Int(1));
        assert_eq!(m["b"], ConfigValue::Rational(0.5));
        assert_eq!(m["c"], ConfigValue::Bool(true));
        assert_eq!(m["d"], ConfigValue::str("hello"));
        assert_eq!(m["e"], ConfigValue::str("42"));
        assert_eq!(m["f"], ConfigValue::List(vec![ConfigValue::Int(1), ConfigValue::Int(2)]));
        assert_eq!(m["g"].as_map().unwrap()["h"], ConfigValue::Int(-7));
    }

    #[test]
    fn large_unsigned_integers() {
        let v = parse_yaml("seed: 18446744073709551615\n").unwrap();
        assert_eq!(v.as_map().unwrap()["seed"], ConfigValue::Int(u64::MAX as i128));
    }

    #[test]
    fn rejects_outside_subset() {
        for doc in ["a: &x 1\nb: *x\n", "a: 1\n---\nb: 2\n", "a: !!str 1\n", "a:\n", "a: 1\na: 2\n"] {
            assert!(parse_yaml(doc).is_err(), "accepted {doc:?}");
        }
    }

    #[test]
    fn syntax_errors_report_position() {
        let e = parse_yaml("a: [1, 2\nb: 3\n").unwrap_err();
        assert!(e.line >= 1 && e.col >= 1);
        let e = parse_yaml("a: 1\n  b: 2\n").unwrap_err();
        assert_eq!(e.line, 2);
    }

    fn arb_value() -> impl Strategy<Value = ConfigValue> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(|i| ConfigValue::Int(i as i128)),
            "[ -~]{0,12}".prop_map(ConfigValue::Str),
            any::<bool>().prop_map(ConfigValue::Bool),
            (-1.0e6f64..1.0e6).prop_map(ConfigValue::Rational),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(ConfigValue::List),
                prop::collection::vec(("[a-z_][a-z0-9_]{0,6}", inner), 0..4)
                    .prop_map(|kv| { ConfigValue::Map(kv.into_iter().collect()) }),
            ]
        })
    }

    proptest! {
        #[test]
        fn emit_then_parse_is_identity(entries in prop::collection::vec(("[a-z][a-z0-9_]{0,6}", arb_value()), 1..5)) {
            let doc = ConfigValue::Map(entries.into_iter().collect());
            let text = emit_yaml(&doc);
            prop_assert_eq!(parse_yaml(&text).unwrap(), doc);
        }
    }
}
