use serde::Serialize;

use crate::plugin::{PluginKind, PluginRegistry};

use super::experiment::{ExperimentConfig, PluginRef, ServiceConfig, ServiceRole};
use super::schema::SchemaField;
use super::template::render_template;
use super::value::{flatten, insert_path, lookup, ConfigValue, ParamMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Issue { path: path.into(), message: message.into() });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub report: ValidationReport,
    /// Copy of the input with schema defaults filled in.
    pub resolved: ExperimentConfig,
    /// Dotted paths of every default filled by this call.
    pub defaults_filled: Vec<String>,
}

/// Checks `params` against `schema`, filling defaults in place. Each problem
/// adds exactly one error.
pub fn check_params(
    params: &mut ParamMap,
    schema: &[SchemaField],
    path: &str,
    report: &mut ValidationReport,
    filled: &mut Vec<String>,
) {
    for (leaf, _) in flatten(params) {
        let known = schema.iter().any(|f| f.key == leaf);
        if !known {
            report.error(format!("{path}.{leaf}"), "unknown key");
        }
    }
    for field in schema {
        let fpath = format!("{path}.{}", field.key);
        match lookup(params, &field.key) {
            Some(v) => {
                if let Err(m) = field.check(v) {
                    report.error(fpath, m);
                }
            }
            None if field.required => report.error(fpath, "missing required key"),
            None => {
                if let Some(d) = field.default() {
                    if insert_path(params, &field.key, d.clone()) {
                        filled.push(fpath);
                    }
                }
            }
        }
    }
}

fn check_ref(
    r: &mut PluginRef,
    expected: PluginKind,
    path: &str,
    registry: &PluginRegistry,
    report: &mut ValidationReport,
    filled: &mut Vec<String>,
) -> bool {
    if r.kind != expected {
        report.error(format!("{path}.kind"), format!("expected kind {expected}, found {}", r.kind));
        return false;
    }
    match registry.resolve(expected, &r.name) {
        Ok(d) => {
            check_params(&mut r.params, &d.schema, &format!("{path}.params"), report, filled);
            true
        }
        Err(e) => {
            report.error(format!("{path}.name"), e.to_string());
            false
        }
    }
}

/// Context visible to a service's command template: its own
/// `template_params`, plus `service`, `protocol`, `implementation` and
/// `experiment` maps unless a template param of that name shadows them.
pub fn template_context(config: &ExperimentConfig, service: &ServiceConfig) -> ParamMap {
    let mut ctx = service.template_params.clone();
    let plugin = |r: &PluginRef| {
        let mut m = r.params.clone();
        m.shift_insert(0, "name".into(), ConfigValue::str(&r.name));
        ConfigValue::Map(m)
    };
    let mut svc = ParamMap::new();
    svc.insert("name".into(), ConfigValue::str(&service.name));
    svc.insert("role".into(), ConfigValue::str(service.role.as_str()));
    let mut exp = ParamMap::new();
    exp.insert("name".into(), ConfigValue::str(&config.name));
    exp.insert("seed".into(), ConfigValue::Int(config.seed as i128));
    for (k, v) in [
        ("service", ConfigValue::Map(svc)),
        ("protocol", plugin(&service.protocol)),
        ("implementation", plugin(&service.implementation)),
        ("experiment", ConfigValue::Map(exp)),
    ] {
        ctx.entry(k.to_string()).or_insert(v);
    }
    ctx
}

/// Accumulating validation. Never fails; every problem lands in the report.
pub fn validate_config(config: &ExperimentConfig, registry: &PluginRegistry) -> Validation {
    let mut report = ValidationReport::default();
    let mut filled = Vec::new();
    let mut resolved = config.clone();

    if resolved.name.is_empty() {
        report.error("name", "must not be empty");
    }
    check_ref(&mut resolved.network, PluginKind::NetworkEnvironment, "network", registry, &mut report, &mut filled);
    check_ref(
        &mut resolved.execution,
        PluginKind::ExecutionEnvironment,
        "execution",
        registry,
        &mut report,
        &mut filled,
    );

    for i in 0..resolved.services.len() {
        let path = format!("services[{i}]");
        let svc = &mut resolved.services[i];
        if config.services[..i].iter().any(|s| s.name == svc.name) {
            report.error(format!("{path}.name"), format!("duplicate service name `{}`", svc.name));
        }
        check_ref(
            &mut svc.protocol,
            PluginKind::Protocol,
            &format!("{path}.protocol"),
            registry,
            &mut report,
            &mut filled,
        );
        let expected = svc.role.implementation_kind();
        check_ref(
            &mut svc.implementation,
            expected,
            &format!("{path}.implementation"),
            registry,
            &mut report,
            &mut filled,
        );
    }
    for (i, svc) in resolved.services.iter().enumerate() {
        let ctx = template_context(&resolved, svc);
        if let Err(e) = render_template(&svc.command_template, &ctx) {
            report.error(format!("services[{i}].command_template"), e.to_string());
        }
    }

    for (j, t) in resolved.tests.iter().enumerate() {
        let path = format!("tests[{j}]");
        if resolved.tests[..j].iter().any(|p| p.test_name == t.test_name) {
            report.error(format!("{path}.test_name"), format!("duplicate test name `{}`", t.test_name));
        }
        let tester = resolved.service(&t.tester_service);
        let target = resolved.service(&t.target_service);
        match tester {
            None => report.error(format!("{path}.tester_service"), format!("no service named `{}`", t.tester_service)),
            Some(s) if s.role != ServiceRole::Tester => {
                report.error(format!("{path}.tester_service"), format!("service `{}` has role {}", s.name, s.role))
            }
            _ => {}
        }
        match target {
            None => report.error(format!("{path}.target_service"), format!("no service named `{}`", t.target_service)),
            Some(s) if s.role != ServiceRole::Iut => {
                report.error(format!("{path}.target_service"), format!("service `{}` has role {}", s.name, s.role))
            }
            Some(s) if t.tester_service == t.target_service => {
                report.error(format!("{path}.target_service"), format!("service `{}` cannot test itself", s.name))
            }
            _ => {}
        }
        if let (Some(a), Some(b)) = (tester, target) {
            if a.protocol.name != b.protocol.name {
                report.error(
                    format!("{path}.target_service"),
                    format!(
                        "protocol mismatch: `{}` speaks {}, `{}` speaks {}",
                        a.name, a.protocol.name, b.name, b.protocol.name
                    ),
                );
            }
        }
        if t.iterations == 0 {
            report.error(format!("{path}.iterations"), "must be at least 1");
        }
        if t.timeout.as_nanos() == 0 {
            report.error(format!("{path}.timeout"), "must be positive");
        }
    }
    if resolved.tests.is_empty() {
        report.warnings.push(Issue { path: "tests".into(), message: "no tests declared".into() });
    }

    report.ok = report.errors.is_empty();
    Validation { report, resolved, defaults_filled: filled }
}
