use std::fmt;

use indexmap::IndexMap;

use crate::netsim::Duration;
use crate::plugin::PluginKind;

use super::schema::as_duration;
use super::template::TemplateString;
use super::value::{ConfigValue, ParamMap};
use super::yaml::{emit_yaml, parse_yaml};
use super::ConfigError;

pub const DEFAULT_EXECUTION: &str = "inproc";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq)]
pub struct PluginRef {
    pub kind: PluginKind,
    pub name: String,
    pub params: ParamMap,
}

impl PluginRef {
    pub fn new(kind: PluginKind, name: &str) -> Self {
        PluginRef { kind, name: name.into(), params: ParamMap::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServiceRole {
    Tester,
    Iut,
}

impl ServiceRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceRole::Tester => "tester",
            ServiceRole::Iut => "iut",
        }
    }

    pub fn implementation_kind(self) -> PluginKind {
        match self {
            ServiceRole::Tester => PluginKind::Tester,
            ServiceRole::Iut => PluginKind::Iut,
        }
    }
}

impl fmt::Display for ServiceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub name: String,
    pub role: ServiceRole,
    pub protocol: PluginRef,
    pub implementation: PluginRef,
    pub command_template: TemplateString,
    pub template_params: ParamMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub test_name: String,
    pub tester_service: String,
    pub target_service: String,
    pub iterations: u64,
    pub timeout: Duration,
    pub seed_offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub network: PluginRef,
    pub execution: PluginRef,
    pub services: Vec<ServiceConfig>,
    pub tests: Vec<TestConfig>,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn service(&self, name: &str) -> Option<&ServiceConfig> {
        self.services.iter().find(|s| s.name == name)
    }
}

const TOP_KEYS: &[&str] = &["name", "seed", "network", "execution", "services", "tests", "output_dir"];

fn missing(path: &str) -> ConfigError {
    ConfigError::Missing { path: path.into() }
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

fn as_map<'a>(v: &'a ConfigValue, path: &str) -> Result<&'a ParamMap, ConfigError> {
    v.as_map().ok_or_else(|| invalid(path, format!("expected a map, found {}", v.type_name())))
}

fn reject_unknown(map: &ParamMap, allowed: &[&str], path: &str) -> Result<(), ConfigError> {
    for k in map.keys() {
        if !allowed.contains(&k.as_str()) {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            return Err(invalid(&p, "unknown key"));
        }
    }
    Ok(())
}

fn get_string(map: &ParamMap, key: &str, path: &str) -> Result<String, ConfigError> {
    match map.get(key) {
        None => Err(missing(path)),
        Some(ConfigValue::Str(s)) if !s.is_empty() => Ok(s.clone()),
        Some(ConfigValue::Str(_)) => Err(invalid(path, "must not be empty")),
        Some(v) => Err(invalid(path, format!("expected a string, found {}", v.type_name()))),
    }
}

fn get_u64(v: &ConfigValue, path: &str) -> Result<u64, ConfigError> {
    match v {
        ConfigValue::Int(i) => {
            u64::try_from(*i).map_err(|_| invalid(path, format!("{i} is not an unsigned 64-bit integer")))
        }
        other => Err(invalid(path, format!("expected an integer, found {}", other.type_name()))),
    }
}

fn parse_plugin_ref(v: &ConfigValue, kind: PluginKind, path: &str) -> Result<PluginRef, ConfigError> {
    if let ConfigValue::Str(name) = v {
        return Ok(PluginRef::new(kind, name));
    }
    let map = as_map(v, path)?;
    reject_unknown(map, &["kind", "name", "params"], path)?;
    let name = get_string(map, "name", &format!("{path}.name"))?;
    if let Some(k) = map.get("kind") {
        let kpath = format!("{path}.kind");
        let declared: PluginKind = k
            .as_str()
            .ok_or_else(|| invalid(&kpath, "expected a plugin kind"))?
            .parse()
            .map_err(|e: String| invalid(&kpath, e))?;
        if declared != kind {
            return Err(invalid(&kpath, format!("expected kind {kind}, found {declared}")));
        }
    }
    let params = match map.get("params") {
        None => ParamMap::new(),
        Some(p) => as_map(p, &format!("{path}.params"))?.clone(),
    };
    Ok(PluginRef { kind, name, params })
}

fn parse_service(v: &ConfigValue, path: &str) -> Result<ServiceConfig, ConfigError> {
    let map = as_map(v, path)?;
    reject_unknown(map, &["name", "role", "protocol", "implementation", "command_template", "template_params"], path)?;
    let name = get_string(map, "name", &format!("{path}.name"))?;
    let role_path = format!("{path}.role");
    let role = match get_string(map, "role", &role_path)?.as_str() {
        "tester" => ServiceRole::Tester,
        "iut" => ServiceRole::Iut,
        other => return Err(invalid(&role_path, format!("expected `tester` or `iut`, found `{other}`"))),
    };
    let protocol_path = format!("{path}.protocol");
    let protocol = parse_plugin_ref(
        map.get("protocol").ok_or_else(|| missing(&protocol_path))?,
        PluginKind::Protocol,
        &protocol_path,
    )?;
    let impl_path = format!("{path}.implementation");
    let implementation = parse_plugin_ref(
        map.get("implementation").ok_or_else(|| missing(&impl_path))?,
        role.implementation_kind(),
        &impl_path,
    )?;
    let tpl_path = format!("{path}.command_template");
    let command_template = match map.get("command_template") {
        None => TemplateString::default(),
        Some(ConfigValue::Str(s)) => TemplateString::parse(s).map_err(|e| invalid(&tpl_path, e.to_string()))?,
        Some(other) => return Err(invalid(&tpl_path, format!("expected a string, found {}", other.type_name()))),
    };
    let template_params = match map.get("template_params") {
        None => ParamMap::new(),
        Some(p) => as_map(p, &format!("{path}.template_params"))?.clone(),
    };
    Ok(ServiceConfig { name, role, protocol, implementation, command_template, template_params })
}

fn parse_test(v: &ConfigValue, path: &str) -> Result<TestConfig, ConfigError> {
    let map = as_map(v, path)?;
    reject_unknown(
        map,
        &["test_name", "tester_service", "target_service", "iterations", "timeout", "seed_offset"],
        path,
    )?;
    let test_name = get_string(map, "test_name", &format!("{path}.test_name"))?;
    let tester_service = get_string(map, "tester_service", &format!("{path}.tester_service"))?;
    let target_service = get_string(map, "target_service", &format!("{path}.target_service"))?;
    let iterations = match map.get("iterations") {
        None => 1,
        Some(v) => get_u64(v, &format!("{path}.iterations"))?,
    };
    let timeout = match map.get("timeout") {
        None => DEFAULT_TIMEOUT,
        Some(v) => {
            as_duration(v).ok_or_else(|| invalid(&format!("{path}.timeout"), format!("`{v}` is not a duration")))?
        }
    };
    let seed_offset = match map.get("seed_offset") {
        None => 0,
        Some(v) => get_u64(v, &format!("{path}.seed_offset"))?,
    };
    Ok(TestConfig { test_name, tester_service, target_service, iterations, timeout, seed_offset })
}

fn parse_list<T>(
    root: &ParamMap,
    key: &str,
    f: impl Fn(&ConfigValue, &str) -> Result<T, ConfigError>,
) -> Result<Vec<T>, ConfigError> {
    let v = root.get(key).ok_or_else(|| missing(key))?;
    let items = v.as_list().ok_or_else(|| invalid(key, format!("expected a list, found {}", v.type_name())))?;
    items.iter().enumerate().map(|(i, item)| f(item, &format!("{key}[{i}]"))).collect()
}

/// Parses an experiment document. Plugin names and params are not checked
/// here; see [`super::validate_config`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let doc = parse_yaml(text)?;
    let root = doc.as_map().ok_or_else(|| invalid("", "top level must be a map"))?;
    reject_unknown(root, TOP_KEYS, "")?;
    let name = get_string(root, "name", "name")?;
    let seed = get_u64(root.get("seed").ok_or_else(|| missing("seed"))?, "seed")?;
    let network = parse_plugin_ref(
        root.get("network").ok_or_else(|| missing("network"))?,
        PluginKind::NetworkEnvironment,
        "network",
    )?;
    let execution = match root.get("execution") {
        None => PluginRef::new(PluginKind::ExecutionEnvironment, DEFAULT_EXECUTION),
        Some(v) => parse_plugin_ref(v, PluginKind::ExecutionEnvironment, "execution")?,
    };
    let services = parse_list(root, "services", parse_service)?;
    for (i, s) in services.iter().enumerate() {
        if services[..i].iter().any(|p| p.name == s.name) {
            return Err(ConfigError::DuplicateService { path: format!("services[{i}].name"), name: s.name.clone() });
        }
    }
    let tests = parse_list(root, "tests", parse_test)?;
    let output_dir = match root.get("output_dir") {
        None => format!("./results/{name}"),
        Some(ConfigValue::Str(s)) => s.clone(),
        Some(other) => return Err(invalid("output_dir", format!("expected a string, found {}", other.type_name()))),
    };
    Ok(ExperimentConfig { name, seed, network, execution, services, tests, output_dir })
}

fn plugin_ref_value(r: &PluginRef) -> ConfigValue {
    let mut m = IndexMap::new();
    m.insert("kind".into(), ConfigValue::str(r.kind.as_str()));
    m.insert("name".into(), ConfigValue::str(&r.name));
    m.insert("params".into(), ConfigValue::Map(r.params.clone()));
    ConfigValue::Map(m)
}

pub fn config_to_value(c: &ExperimentConfig) -> ConfigValue {
    let mut root = IndexMap::new();
    root.insert("name".into(), ConfigValue::str(&c.name));
    root.insert("seed".into(), ConfigValue::Int(c.seed as i128));
    root.insert("network".into(), plugin_ref_value(&c.network));
    root.insert("execution".into(), plugin_ref_value(&c.execution));
    let services = c
        .services
        .iter()
        .map(|s| {
            let mut m = IndexMap::new();
            m.insert("name".into(), ConfigValue::str(&s.name));
            m.insert("role".into(), ConfigValue::str(s.role.as_str()));
            m.insert("protocol".into(), plugin_ref_value(&s.protocol));
            m.insert("implementation".into(), plugin_ref_value(&s.implementation));
            m.insert("command_template".into(), ConfigValue::str(s.command_template.raw()));
            m.insert("template_params".into(), ConfigValue::Map(s.template_params.clone()));
            ConfigValue::Map(m)
        })
        .collect();
    root.insert("services".into(), ConfigValue::List(services));
    let tests = c
        .tests
        .iter()
        .map(|t| {
            let mut m = IndexMap::new();
            m.insert("test_name".into(), ConfigValue::str(&t.test_name));
            m.insert("tester_service".into(), ConfigValue::str(&t.tester_service));
            m.insert("target_service".into(), ConfigValue::str(&t.target_service));
            m.insert("iterations".into(), ConfigValue::Int(t.iterations as i128));
            m.insert("timeout".into(), ConfigValue::str(t.timeout.to_string()));
            m.insert("seed_offset".into(), ConfigValue::Int(t.seed_offset as i128));
            ConfigValue::Map(m)
        })
        .collect();
    root.insert("tests".into(), ConfigValue::List(tests));
    root.insert("output_dir".into(), ConfigValue::str(&c.output_dir));
    ConfigValue::Map(root)
}

pub fn serialize_config(c: &ExperimentConfig) -> String {
    emit_yaml(&config_to_value(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const MINIMAL: &str = "\
name: demo
seed: 7
network: detsim
services:
  - name: server
    role: iut
    protocol: minip
    implementation: minip_server
  - name: client
    role: tester
    protocol: minip
    implementation:
      name: model_tester
      params:
        policy: greedy
    command_template: \"run --name {{ name }}\"
tests:
  - test_name: t
    tester_service: client
    target_service: server
";

    #[test]
    fn parses_minimal() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.services.len(), 2);
        assert_eq!(c.execution.name, DEFAULT_EXECUTION);
        assert_eq!(c.output_dir, "./results/demo");
        assert_eq!(c.services[1].implementation.kind, PluginKind::Tester);
        assert_eq!(c.tests[0].iterations, 1);
        assert_eq!(c.tests[0].timeout, DEFAULT_TIMEOUT);
    }

    #[test]
    fn missing_seed_names_path() {
        let text = MINIMAL.replace("seed: 7\n", "");
        assert_eq!(parse_config(&text), Err(ConfigError::Missing { path: "seed".into() }));
    }

    #[test]
    fn duplicate_service_name() {
        let text = MINIMAL.replace("name: client", "name: server");
        match parse_config(&text) {
            Err(ConfigError::DuplicateService { path, .. }) => assert_eq!(path, "services[1].name"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config("name: [x\nseed: 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax(_)));
        assert!(err.to_string().contains("line"));
    }

    #[test]
    fn mismatched_kind_rejected() {
        let text = MINIMAL.replace("network: detsim", "network:\n  kind: Protocol\n  name: detsim");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { path, .. }) if path == "network.kind"));
    }

    fn arb_params() -> impl Strategy<Value = ParamMap> {
        prop::collection::vec(
            (
                "[a-z][a-z_]{0,6}",
                prop_oneof![
                    any::<i32>().prop_map(|i| ConfigValue::Int(i as i128)),
                    "[a-z0-9 ]{0,8}".prop_map(ConfigValue::Str),
                    any::<bool>().prop_map(ConfigValue::Bool),
                    (0.0f64..10.0).prop_map(ConfigValue::Rational),
                ],
            ),
            0..4,
        )
        .prop_map(|kv| kv.into_iter().collect())
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_round_trip(
            seed in any::<u64>(),
            offset in any::<u64>(),
            iterations in 1u64..100,
            timeout_ms in 1u64..100_000,
            net in arb_params(),
            tpl in arb_params(),
        ) {
            let mut c = parse_config(MINIMAL).unwrap();
            c.seed = seed;
            c.network.params = net;
            c.services[0].template_params = tpl;
            c.tests[0].seed_offset = offset;
            c.tests[0].iterations = iterations;
            c.tests[0].timeout = Duration::from_millis(timeout_ms);
            let text = serialize_config(&c);
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(serialize_config(&back), text);
        }
    }
}
