use std::fmt;

use crate::netsim::Duration;

use super::value::ConfigValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    Int,
    String,
    Bool,
    Rational,
    Duration,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Int => "int",
            ValueType::String => "string",
            ValueType::Bool => "bool",
            ValueType::Rational => "rational",
            ValueType::Duration => "duration",
        })
    }
}

/// Inclusive numeric bounds. Durations compare in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NumRange {
    Int { min: i128, max: i128 },
    Real { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaField {
    pub key: String,
    pub value_type: ValueType,
    pub required: bool,
    default: Option<ConfigValue>,
    pub range: Option<NumRange>,
    pub choices: Option<Vec<String>>,
}

impl SchemaField {
    pub fn required(key: &str, value_type: ValueType) -> Self {
        SchemaField { key: key.into(), value_type, required: true, default: None, range: None, choices: None }
    }

    /// An optional key. `default` may be absent, in which case nothing is
    /// filled when the key is missing.
    pub fn optional(key: &str, value_type: ValueType, default: Option<ConfigValue>) -> Self {
        SchemaField { key: key.into(), value_type, required: false, default, range: None, choices: None }
    }

    pub fn with_int_range(mut self, min: i128, max: i128) -> Self {
        self.range = Some(NumRange::Int { min, max });
        self
    }

    pub fn with_real_range(mut self, min: f64, max: f64) -> Self {
        self.range = Some(NumRange::Real { min, max });
        self
    }

    pub fn with_choices(mut self, choices: &[&str]) -> Self {
        self.choices = Some(choices.iter().map(|c| c.to_string()).collect());
        self
    }

    pub fn default(&self) -> Option<&ConfigValue> {
        self.default.as_ref()
    }

    /// Checks one present value against type, range and choices.
    pub fn check(&self, value: &ConfigValue) -> Result<(), String> {
        let numeric: Option<f64>;
        let integral: Option<i128>;
        match (self.value_type, value) {
            (ValueType::Int, ConfigValue::Int(i)) => {
                integral = Some(*i);
                numeric = Some(*i as f64);
            }
            (ValueType::Rational, ConfigValue::Int(_) | ConfigValue::Rational(_)) => {
                integral = value.as_int();
                numeric = value.as_f64();
            }
            (ValueType::Bool, ConfigValue::Bool(_)) => {
                integral = None;
                numeric = None;
            }
            (ValueType::String, ConfigValue::Str(s)) => {
                if let Some(choices) = &self.choices {
                    if !choices.iter().any(|c| c == s) {
                        return Err(format!("`{s}` is not one of [{}]", choices.join(", ")));
                    }
                }
                return Ok(());
            }
            (ValueType::Duration, v) => {
                let d = as_duration(v).ok_or_else(|| format!("expected a duration such as `200ms`, found `{v}`"))?;
                integral = Some(d.as_nanos() as i128);
                numeric = Some(d.as_nanos() as f64);
            }
            (ty, v) => return Err(format!("expected {ty}, found {}", v.type_name())),
        }
        match self.range {
            Some(NumRange::Int { min, max }) => {
                let i = integral.unwrap_or_else(|| numeric.unwrap_or(0.0) as i128);
                let exact = integral.is_some() || numeric.is_some_and(|n| n.fract() == 0.0);
                if !exact || i < min || i > max {
                    return Err(format!("{value} is outside the range [{min}, {max}]"));
                }
            }
            Some(NumRange::Real { min, max }) => {
                let n = numeric.unwrap_or(0.0);
                if !(n >= min && n <= max) {
                    return Err(format!("{value} is outside the range [{min}, {max}]"));
                }
            }
            None => {}
        }
        Ok(())
    }
}

/// Durations are written as strings with a unit (`200ms`) or as a bare
/// non-negative integer count of nanoseconds.
pub fn as_duration(v: &ConfigValue) -> Option<Duration> {
    match v {
        ConfigValue::Str(s) => s.parse().ok(),
        ConfigValue::Int(i) => u64::try_from(*i).ok().map(Duration::from_nanos),
        _ => None,
    }
}
