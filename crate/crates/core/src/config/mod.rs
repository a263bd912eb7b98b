//! Experiment configuration: parsing, schema validation and command
//! templates.

mod experiment;
mod schema;
mod template;
mod validate;
mod value;
pub mod yaml;

pub use experiment::{
    config_to_value, parse_config, serialize_config, ExperimentConfig, PluginRef, ServiceConfig, ServiceRole,
    TestConfig, DEFAULT_EXECUTION, DEFAULT_TIMEOUT,
};
pub use schema::{as_duration, NumRange, SchemaField, ValueType};
pub use template::{context, render_template, TemplateError, TemplateString};
pub use validate::{check_params, template_context, validate_config, Issue, Validation, ValidationReport};
pub use value::{flatten, insert_path, lookup, ConfigValue, ParamMap};
pub use yaml::YamlError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at {0}")]
    Syntax(#[from] YamlError),
    #[error("{path}: missing mandatory key")]
    Missing { path: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: duplicate service name `{name}`")]
    DuplicateService { path: String, name: String },
}

impl ConfigError {
    /// Path of the offending key, empty for syntax errors.
    pub fn path(&self) -> &str {
        match self {
            ConfigError::Syntax(_) => "",
            ConfigError::Missing { path }
            | ConfigError::Invalid { path, .. }
            | ConfigError::DuplicateService { path, .. } => path,
        }
    }
}
