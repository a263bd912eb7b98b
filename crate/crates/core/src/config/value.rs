use std::fmt;

use indexmap::IndexMap;

/// A configuration value as read from a YAML document.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Int(i128),
    Str(String),
    Bool(bool),
    Rational(f64),
    Map(IndexMap<String, ConfigValue>),
    List(Vec<ConfigValue>),
}

pub type ParamMap = IndexMap<String, ConfigValue>;

impl ConfigValue {
    pub fn str(s: impl Into<String>) -> Self {
        ConfigValue::Str(s.into())
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ConfigValue::Int(_) => "integer",
            ConfigValue::Str(_) => "string",
            ConfigValue::Bool(_) => "boolean",
            ConfigValue::Rational(_) => "decimal",
            ConfigValue::Map(_) => "map",
            ConfigValue::List(_) => "list",
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, ConfigValue::Map(_) | ConfigValue::List(_))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConfigValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i128> {
        match self {
            ConfigValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ConfigValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Integers widen to decimals.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ConfigValue::Int(i) => Some(*i as f64),
            ConfigValue::Rational(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&ParamMap> {
        match self {
            ConfigValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[ConfigValue]> {
        match self {
            ConfigValue::List(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for ConfigValue {
    /// Scalar rendering used by templates: integers without padding, decimals
    /// in shortest round-trip form, booleans as `true`/`false`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Int(i) => write!(f, "{i}"),
            ConfigValue::Str(s) => f.write_str(s),
            ConfigValue::Bool(b) => write!(f, "{b}"),
            ConfigValue::Rational(r) => write!(f, "{r}"),
            ConfigValue::Map(_) => f.write_str("<map>"),
            ConfigValue::List(_) => f.write_str("<list>"),
        }
    }
}

/// Dotted-path lookup through nested maps.
pub fn lookup<'a>(root: &'a ParamMap, path: &str) -> Option<&'a ConfigValue> {
    let mut parts = path.split('.');
    let mut cur = root.get(parts.next()?)?;
    for part in parts {
        cur = cur.as_map()?.get(part)?;
    }
    Some(cur)
}

/// Inserts at a dotted path, creating intermediate maps. Returns false when
/// an intermediate segment exists but is not a map.
pub fn insert_path(root: &mut ParamMap, path: &str, value: ConfigValue) -> bool {
    let parts: Vec<&str> = path.split('.').collect();
    let (last, inner) = parts.split_last().expect("non-empty path");
    let mut cur = root;
    for part in inner {
        let slot = cur.entry(part.to_string()).or_insert_with(|| ConfigValue::Map(ParamMap::new()));
        match slot {
            ConfigValue::Map(m) => cur = m,
            _ => return false,
        }
    }
    cur.insert(last.to_string(), value);
    true
}

/// Leaf values with their dotted paths, in document order. Non-empty maps are
/// descended; lists and empty maps are leaves.
pub fn flatten(root: &ParamMap) -> Vec<(String, &ConfigValue)> {
    fn walk<'a>(prefix: &str, map: &'a ParamMap, out: &mut Vec<(String, &'a ConfigValue)>) {
        for (k, v) in map {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                ConfigValue::Map(inner) if !inner.is_empty() => walk(&path, inner, out),
                _ => out.push((path, v)),
            }
        }
    }
    let mut out = Vec::new();
    walk("", root, &mut out);
    out
}
