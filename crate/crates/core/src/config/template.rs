use std::fmt;

use super::value::{lookup, ConfigValue, ParamMap};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A command template with `{{ identifier }}` placeholders. Identifiers may
/// use dots for nested lookup. There is no escape for a literal `{{`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateString {
    raw: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("malformed template at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unresolved placeholder `{0}`")]
    Unresolved(String),
    #[error("placeholder `{name}` refers to a {found}, expected a scalar")]
    NotScalar { name: String, found: &'static str },
}

fn valid_identifier(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl TemplateString {
    pub fn parse(raw: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = raw;
        let mut offset = 0;
        loop {
            let open = rest.find("{{");
            let close = rest.find("}}");
            match (open, close) {
                (None, None) => {
                    if !rest.is_empty() {
                        segments.push(Segment::Literal(rest.to_string()));
                    }
                    break;
                }
                (None, Some(c)) => {
                    return Err(TemplateError::Malformed { offset: offset + c, message: "unbalanced `}}`".into() })
                }
                (Some(o), Some(c)) if c < o => {
                    return Err(TemplateError::Malformed { offset: offset + c, message: "unbalanced `}}`".into() })
                }
                (Some(o), None) => {
                    return Err(TemplateError::Malformed { offset: offset + o, message: "unterminated `{{`".into() })
                }
                (Some(o), Some(c)) => {
                    let inner = &rest[o + 2..c];
                    if inner.contains("{{") {
                        return Err(TemplateError::Malformed {
                            offset: offset + o,
                            message: "nested placeholders are not allowed".into(),
                        });
                    }
                    let id = inner.trim();
                    if !valid_identifier(id) {
                        return Err(TemplateError::Malformed {
                            offset: offset + o,
                            message: format!("invalid placeholder identifier `{id}`"),
                        });
                    }
                    if o > 0 {
                        segments.push(Segment::Literal(rest[..o].to_string()));
                    }
                    segments.push(Segment::Placeholder(id.to_string()));
                    offset += c + 2;
                    rest = &rest[c + 2..];
                }
            }
        }
        Ok(TemplateString { raw: raw.to_string(), segments })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p.as_str()),
            Segment::Literal(_) => None,
        })
    }
}

impl fmt::Display for TemplateString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

pub fn render_template(template: &TemplateString, context: &ParamMap) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.raw.len());
    for seg in &template.segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Placeholder(name) => {
                let value = lookup(context, name).ok_or_else(|| TemplateError::Unresolved(name.clone()))?;
                if !value.is_scalar() {
                    return Err(TemplateError::NotScalar { name: name.clone(), found: value.type_name() });
                }
                out.push_str(&value.to_string());
            }
        }
    }
    Ok(out)
}

/// Convenience for building contexts in code.
pub fn context(entries: impl IntoIterator<Item = (&'static str, ConfigValue)>) -> ParamMap {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn render(t: &str, ctx: &ParamMap) -> Result<String, TemplateError> {
        render_template(&TemplateString::parse(t)?, ctx)
    }

    #[test]
    fn renders_simple_and_dotted() {
        let ctx = context([("name", ConfigValue::str("minip"))]);
        assert_eq!(render("run --name {{ name }}", &ctx).unwrap(), "run --name minip");
        assert_eq!(render("no placeholders", &ParamMap::new()).unwrap(), "no placeholders");
        let mut net = ParamMap::new();
        net.insert("port".into(), ConfigValue::Int(4443));
        let ctx = context([("net", ConfigValue::Map(net))]);
        assert_eq!(render("-p {{ net.port }}", &ctx).unwrap(), "-p 4443");
        assert_eq!(render("-p {{net.port}}!", &ctx).unwrap(), "-p 4443!");
    }

    #[test]
    fn scalar_forms() {
        let ctx =
            context([("r", ConfigValue::Rational(0.25)), ("b", ConfigValue::Bool(true)), ("n", ConfigValue::Int(-5))]);
        assert_eq!(render("{{r}} {{b}} {{n}}", &ctx).unwrap(), "0.25 true -5");
    }

    #[test]
    fn errors() {
        assert_eq!(render("{{ missing }}", &ParamMap::new()), Err(TemplateError::Unresolved("missing".into())));
        let ctx = context([("m", ConfigValue::Map(ParamMap::new()))]);
        assert!(matches!(render("{{ m }}", &ctx), Err(TemplateError::NotScalar { .. })));
        for bad in ["{{ a", "a }}", "{{ {{ a }} }}", "{{ 1a }}", "{{ }}", "{{ a b }}"] {
            assert!(TemplateString::parse(bad).is_err(), "accepted {bad:?}");
        }
    }

    proptest! {
        #[test]
        fn rendered_output_has_no_placeholders(
            parts in prop::collection::vec(("[a-z ,=-]{0,6}", "[a-z_][a-z0-9_]{0,5}", "[a-z0-9 ]{0,6}"), 0..5)
        ) {
            let mut raw = String::new();
            let mut ctx = ParamMap::new();
            for (lit, id, val) in &parts {
                raw.push_str(lit);
                raw.push_str(&format!("{{{{ {id} }}}}"));
                ctx.insert(id.clone(), ConfigValue::Str(val.clone()));
            }
            let out = render(&raw, &ctx).unwrap();
            prop_assert!(TemplateString::parse(&out).map(|t| t.placeholders().count() == 0).unwrap_or(true));
            prop_assert!(!out.contains("{{"));
        }
    }
}
