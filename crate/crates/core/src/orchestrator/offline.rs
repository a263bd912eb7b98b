//! Rebuilding the specification a recorded trace was checked against.

use std::sync::Arc;

use crate::config::{check_params, insert_path, ConfigValue, ParamMap, ValidationReport};
use crate::netsim::{Bandwidth, Duration, EventKind, NetworkParams, Trace};
use crate::plugin::{Factory, PluginKind, PluginRegistry, ProtocolContext};
use crate::spec::{compile_spec, load_spec, CompiledSpec, PROVENANCE};

fn scalar(s: &str) -> ConfigValue {
    if let Ok(i) = s.parse::<i128>() {
        return ConfigValue::Int(i);
    }
    match s {
        "true" => return ConfigValue::Bool(true),
        "false" => return ConfigValue::Bool(false),
        _ => {}
    }
    if s.contains('.') {
        if let Ok(f) = s.parse::<f64>() {
            return ConfigValue::Rational(f);
        }
    }
    ConfigValue::str(s)
}

/// Network parameters and protocol params recorded in the trace's
/// experiment provenance event, if there is one.
pub fn recorded_context(trace: &Trace) -> Option<(String, NetworkParams, ParamMap)> {
    let e = trace.iter().find(|e| e.kind == EventKind::ServiceLog && e.attr(PROVENANCE) == Some("experiment"))?;
    let mut net = NetworkParams::default();
    if let Some(d) = e.attr("network.latency").and_then(|s| s.parse::<Duration>().ok()) {
        net.latency_base = d;
    }
    if let Some(d) = e.attr("network.jitter").and_then(|s| s.parse::<Duration>().ok()) {
        net.jitter = d;
    }
    if let Some(b) = e.attr("network.bandwidth").and_then(|s| s.parse::<u64>().ok()) {
        net.bandwidth = Bandwidth::BitsPerSec(b);
    }
    if let Some(l) = e.attr("network.loss_rate").and_then(|s| s.parse::<f64>().ok()) {
        net.loss_rate = l;
    }
    if let Some(s) = e.attr("seed").and_then(|s| s.parse::<u64>().ok()) {
        net.seed = s;
    }
    let mut params = ParamMap::new();
    for (k, v) in &e.attrs {
        if let Some(key) = k.strip_prefix("protocol.") {
            insert_path(&mut params, key, scalar(v));
        }
    }
    Some((e.attr("protocol").unwrap_or_default().to_string(), net, params))
}

/// `spec` is either a protocol plugin name or a path to a specification
/// file. A plugin is instantiated with the parameters recorded in the trace
/// when they were recorded for the same protocol, and with defaults
/// otherwise.
pub fn spec_for_trace(registry: &PluginRegistry, spec: &str, trace: &Trace) -> Result<Arc<CompiledSpec>, String> {
    let path = std::path::Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{spec}: {e}"))?;
        let parsed = load_spec(&text).map_err(|e| format!("{spec}: {e}"))?;
        return compile_spec(parsed).map(Arc::new).map_err(|e| format!("{spec}: {e}"));
    }
    let d = registry.resolve(PluginKind::Protocol, spec).map_err(|e| e.to_string())?;
    let Factory::Protocol(pf) = &d.factory else {
        return Err(format!("{spec} is not a protocol plugin"));
    };
    let (mut params, net) = match recorded_context(trace) {
        Some((name, net, params)) if name == spec => (params, net),
        Some((_, net, _)) => (ParamMap::new(), net),
        None => (ParamMap::new(), NetworkParams::default()),
    };
    let mut report = ValidationReport::default();
    check_params(&mut params, &d.schema, "protocol.params", &mut report, &mut Vec::new());
    if let Some(first) = report.errors.first() {
        return Err(format!("{}: {}", first.path, first.message));
    }
    let built = pf(&ProtocolContext { params: &params, network: &net }).map_err(|e| e.to_string())?;
    compile_spec(built).map(Arc::new).map_err(|e| e.to_string())
}
