//! The plugins compiled into this crate.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::config::{as_duration, ConfigValue, ParamMap, SchemaField, ValueType};
use crate::fuzz::FuzzConfig;
use crate::netsim::{Bandwidth, Duration, EventKind, NetworkParams, Trace};
use crate::protocols::minip::{self, MiniPBug, MiniPParams};
use crate::protocols::tinyq::{self, TinyQParams};
use crate::spec::Policy;

use super::{
    ExecutionEnv, Factory, FactoryError, IutContext, IutInstance, PluginDescriptor, PluginRegistry, SimFactory,
    TesterSetup,
};

const VERSION: &str = "0.1.0";

fn text<'a>(p: &'a ParamMap, key: &str, default: &'a str) -> &'a str {
    p.get(key).and_then(ConfigValue::as_str).unwrap_or(default)
}

fn duration(p: &ParamMap, key: &str, default: Duration) -> Result<Duration, FactoryError> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => as_duration(v).ok_or_else(|| FactoryError(format!("{key}: `{v}` is not a duration"))),
    }
}

/// Builds network parameters from validated `detsim` params. The seed is
/// filled in per iteration.
pub fn network_params(p: &ParamMap) -> Result<NetworkParams, FactoryError> {
    let bandwidth = match p.get("bandwidth") {
        None => Bandwidth::Unlimited,
        Some(v) => {
            let bits = v.as_int().and_then(|i| u64::try_from(i).ok()).filter(|b| *b > 0);
            Bandwidth::BitsPerSec(bits.ok_or_else(|| FactoryError("bandwidth: expected a positive integer".into()))?)
        }
    };
    let loss_rate = match p.get("loss_rate") {
        None => 0.0,
        Some(v) => v.as_f64().ok_or_else(|| FactoryError("loss_rate: expected a number".into()))?,
    };
    let params = NetworkParams {
        latency_base: duration(p, "latency", Duration::from_millis(50))?,
        jitter: duration(p, "jitter", Duration::ZERO)?,
        bandwidth,
        loss_rate,
        seed: 0,
    };
    params.validate().map_err(|e| FactoryError(e.to_string()))?;
    Ok(params)
}

fn network_schema() -> Vec<SchemaField> {
    vec![
        SchemaField::optional("latency", ValueType::Duration, Some(ConfigValue::str("50ms"))),
        SchemaField::optional("jitter", ValueType::Duration, Some(ConfigValue::str("0ms"))),
        SchemaField::optional("bandwidth", ValueType::Int, None).with_int_range(1, u64::MAX as i128),
        SchemaField::optional("loss_rate", ValueType::Rational, Some(ConfigValue::Rational(0.0)))
            .with_real_range(0.0, 1.0),
    ]
}

struct InProc;

impl ExecutionEnv for InProc {
    fn name(&self) -> &str {
        "inproc"
    }

    fn metrics(&self, _trace: &Trace) -> Option<serde_json::Value> {
        None
    }
}

/// Per-endpoint message, byte and state-transition counts.
struct Metrics;

#[derive(Default, serde::Serialize)]
struct EndpointCounts {
    messages_sent: u64,
    bytes_sent: u64,
    messages_delivered: u64,
    messages_dropped: u64,
    state_transitions: u64,
}

impl ExecutionEnv for Metrics {
    fn name(&self) -> &str {
        "metrics"
    }

    fn metrics(&self, trace: &Trace) -> Option<serde_json::Value> {
        let mut per: BTreeMap<String, EndpointCounts> = BTreeMap::new();
        for e in trace.iter() {
            let src = || e.src.clone().unwrap_or_default();
            match e.kind {
                EventKind::Sent => {
                    let c = per.entry(src()).or_default();
                    c.messages_sent += 1;
                    c.bytes_sent += e.payload.as_ref().map(|m| m.size_bytes()).unwrap_or(0);
                }
                EventKind::Delivered => {
                    per.entry(e.dst.clone().unwrap_or_default()).or_default().messages_delivered += 1
                }
                EventKind::Dropped => per.entry(src()).or_default().messages_dropped += 1,
                EventKind::StateTransition => per.entry(src()).or_default().state_transitions += 1,
                _ => {}
            }
        }
        serde_json::to_value(per).ok()
    }
}

fn minip_iut(bug: Option<MiniPBug>) -> Factory {
    Factory::Iut(Arc::new(move |ctx: &IutContext<'_>| {
        let params = MiniPParams::from_params(ctx.protocol_params).map_err(FactoryError)?;
        Ok(IutInstance { role: "server".into(), handler: Box::new(minip::minip_server(bug, &params)) })
    }))
}

fn tinyq_iut(bug_cid: bool) -> Factory {
    Factory::Iut(Arc::new(move |ctx: &IutContext<'_>| {
        Ok(IutInstance { role: "server".into(), handler: Box::new(tinyq::tinyq_server(bug_cid, ctx.seed)) })
    }))
}

/// Reads validated `stateful_fuzzer` params.
pub fn fuzz_config(p: &ParamMap) -> Result<FuzzConfig, FactoryError> {
    let d = FuzzConfig::default();
    let rate = p
        .get("mutation_rate")
        .map(|v| v.as_f64().ok_or_else(|| FactoryError("mutation_rate: expected a number".into())));
    let budget = p.get("budget_steps").map(|v| {
        v.as_int()
            .and_then(|i| u64::try_from(i).ok())
            .ok_or_else(|| FactoryError("budget_steps: expected an integer".into()))
    });
    Ok(FuzzConfig {
        role: text(p, "role", &d.role).to_string(),
        mutation_rate: rate.transpose()?.unwrap_or(d.mutation_rate),
        budget_steps: budget.transpose()?.unwrap_or(d.budget_steps),
        delay: duration(p, "delay", d.delay)?,
    })
}

fn register_all(r: &mut PluginRegistry) -> Result<(), super::RegistryError> {
    r.register(
        PluginDescriptor::new(
            "detsim",
            VERSION,
            network_schema(),
            Factory::NetworkEnvironment(Arc::new(|p: &ParamMap| Ok(SimFactory { params: network_params(p)? }))),
        )
        .describe("deterministic discrete-event simulator: latency, jitter, bandwidth, loss"),
    )?;
    r.register(
        PluginDescriptor::new(
            "inproc",
            VERSION,
            vec![],
            Factory::ExecutionEnvironment(Arc::new(|_: &ParamMap| Ok(Box::new(InProc) as Box<dyn ExecutionEnv>))),
        )
        .describe("runs services in-process; no extra output"),
    )?;
    r.register(
        PluginDescriptor::new(
            "metrics",
            VERSION,
            vec![],
            Factory::ExecutionEnvironment(Arc::new(|_: &ParamMap| Ok(Box::new(Metrics) as Box<dyn ExecutionEnv>))),
        )
        .describe("in-process, plus per-service message, byte and transition counts"),
    )?;
    r.register(
        PluginDescriptor::new(
            "model_tester",
            VERSION,
            vec![
                SchemaField::optional("policy", ValueType::String, Some(ConfigValue::str("uniform")))
                    .with_choices(&["uniform", "greedy"]),
                SchemaField::optional("role", ValueType::String, Some(ConfigValue::str("client"))),
            ],
            Factory::Tester(Arc::new(|p: &ParamMap| {
                let policy = Policy::parse(text(p, "policy", "uniform"))
                    .ok_or_else(|| FactoryError("policy: expected uniform or greedy".into()))?;
                Ok(TesterSetup::Model { role: text(p, "role", "client").to_string(), policy })
            })),
        )
        .describe("tester derived from the protocol specification"),
    )?;
    r.register(
        PluginDescriptor::new(
            "stateful_fuzzer",
            VERSION,
            vec![
                SchemaField::optional("role", ValueType::String, Some(ConfigValue::str("client"))),
                SchemaField::optional("mutation_rate", ValueType::Rational, Some(ConfigValue::Rational(0.3)))
                    .with_real_range(0.0, 1.0),
                SchemaField::optional("budget_steps", ValueType::Int, Some(ConfigValue::Int(1000)))
                    .with_int_range(1, u64::MAX as i128),
                SchemaField::optional("delay", ValueType::Duration, Some(ConfigValue::str("200ms"))),
            ],
            Factory::Tester(Arc::new(|p: &ParamMap| Ok(TesterSetup::Fuzzer(fuzz_config(p)?)))),
        )
        .describe("model tester that mutates a share of its sends"),
    )?;
    r.register(
        PluginDescriptor::new(
            minip::NAME,
            VERSION,
            MiniPParams::schema(),
            Factory::Protocol(Arc::new(|ctx: &super::ProtocolContext<'_>| {
                let params = MiniPParams::from_params(ctx.params).map_err(FactoryError)?;
                Ok(minip::minip_spec(&params, ctx.network))
            })),
        )
        .describe("handshake, sequenced data with retransmission, teardown"),
    )?;
    r.register(
        PluginDescriptor::new(
            tinyq::NAME,
            VERSION,
            TinyQParams::schema(),
            Factory::Protocol(Arc::new(|ctx: &super::ProtocolContext<'_>| {
                let params = TinyQParams::from_params(ctx.params).map_err(FactoryError)?;
                Ok(tinyq::tinyq_spec(&params))
            })),
        )
        .describe("connection-ID handshake and echo"),
    )?;
    r.register(
        PluginDescriptor::new("minip_server", VERSION, vec![], minip_iut(None)).describe("correct MiniP server"),
    )?;
    for bug in MiniPBug::ALL {
        let name = format!("minip_server:{}", bug.name());
        r.register(
            PluginDescriptor::new(&name, VERSION, vec![], minip_iut(Some(bug))).describe("MiniP server with one fault"),
        )?;
    }
    r.register(
        PluginDescriptor::new("tinyq_server", VERSION, vec![], tinyq_iut(false)).describe("correct TinyQ server"),
    )?;
    r.register(
        PluginDescriptor::new("tinyq_server:bug_cid", VERSION, vec![], tinyq_iut(true))
            .describe("TinyQ server that addresses its handshake to CID 0"),
    )?;
    Ok(())
}

/// Sealed registry holding every built-in plugin.
pub fn default_registry() -> PluginRegistry {
    let mut r = PluginRegistry::new();
    register_all(&mut r).expect("built-in plugin names are unique");
    r.seal();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plugin::PluginKind;

    #[test]
    fn catalog_contents() {
        let r = default_registry();
        assert!(r.is_sealed());
        let protocols: Vec<_> = r.list_by_kind(PluginKind::Protocol).iter().map(|d| d.name.clone()).collect();
        assert_eq!(protocols, ["minip", "tinyq"]);
        let iuts: Vec<_> = r.list_by_kind(PluginKind::Iut).iter().map(|d| d.name.clone()).collect();
        assert_eq!(
            iuts,
            [
                "minip_server",
                "minip_server:bug_ack",
                "minip_server:bug_no_finack",
                "minip_server:bug_prehandshake_data",
                "minip_server:bug_version",
                "tinyq_server",
                "tinyq_server:bug_cid"
            ]
        );
        assert_eq!(r.resolve(PluginKind::NetworkEnvironment, "detsim").unwrap().name, "detsim");
        let err = r.resolve(PluginKind::Iut, "typo").unwrap_err().to_string();
        assert!(err.contains("minip_server"), "{err}");
    }

    #[test]
    fn every_listed_plugin_resolves() {
        let r = default_registry();
        let total: usize = PluginKind::ALL.iter().map(|k| r.list_by_kind(*k).len()).sum();
        assert_eq!(total, r.list_all().len());
        for d in r.list_all() {
            assert_eq!(r.resolve(d.kind, &d.name).unwrap(), d);
        }
    }

    #[test]
    fn network_from_params() {
        let mut p = ParamMap::new();
        p.insert("latency".into(), ConfigValue::str("20ms"));
        p.insert("loss_rate".into(), ConfigValue::Rational(0.25));
        p.insert("bandwidth".into(), ConfigValue::Int(1_000_000));
        let n = network_params(&p).unwrap();
        assert_eq!(n.latency_base, Duration::from_millis(20));
        assert_eq!(n.bandwidth, Bandwidth::BitsPerSec(1_000_000));
        assert_eq!(n.loss_rate, 0.25);
        p.insert("loss_rate".into(), ConfigValue::Rational(1.5));
        assert!(network_params(&p).is_err());
    }

    #[test]
    fn metrics_counts() {
        let mut trace = Trace::new(NetworkParams::default(), "m");
        let msg = crate::netsim::Message::new("minip", "FIN");
        let ev = |seq, kind, src: &str, dst: Option<&str>| crate::netsim::Event {
            seq,
            time: Duration::ZERO,
            kind,
            src: Some(src.into()),
            dst: dst.map(Into::into),
            payload: Some(msg.clone()),
            attrs: Default::default(),
        };
        trace.events.push(ev(0, EventKind::Sent, "a", Some("b")));
        trace.events.push(ev(1, EventKind::Delivered, "a", Some("b")));
        let m = Metrics.metrics(&trace).unwrap();
        assert_eq!(m["a"]["messages_sent"], 1);
        assert_eq!(m["a"]["bytes_sent"], msg.size_bytes());
        assert_eq!(m["b"]["messages_delivered"], 1);
        assert!(InProc.metrics(&trace).is_none());
    }
}
