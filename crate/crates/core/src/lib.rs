//! Deterministic protocol conformance testing.
//!
//! A discrete-event network simulator, a specification engine that derives
//! testers and checks traces, a stateful fuzzer, the shipped protocols and
//! the experiment orchestrator.

pub mod config;
pub mod fuzz;
pub mod netsim;
pub mod orchestrator;
pub mod plugin;
pub mod protocols;
pub mod session;
pub mod spec;

pub use config::{parse_config, validate_config, ConfigError, ExperimentConfig, ValidationReport};
pub use netsim::{Duration, Event, EventKind, Message, NetworkParams, Simulation, Trace};
pub use plugin::{PluginKind, PluginRegistry};
pub use spec::{check_trace, compile_spec, CompiledSpec, ProtocolSpec, Verdict};
