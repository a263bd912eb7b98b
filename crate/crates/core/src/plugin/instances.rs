//! What each plugin kind's factory produces.

use std::fmt;
use std::sync::Arc;

use crate::config::ParamMap;
use crate::fuzz::FuzzConfig;
use crate::netsim::{Handler, NetworkParams, SimError, Simulation, Trace};
use crate::spec::{Policy, ProtocolSpec};

use super::PluginKind;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct FactoryError(pub String);

/// Inputs for instantiating a protocol specification. The network is
/// passed so deadlines can account for link latency.
pub struct ProtocolContext<'a> {
    pub params: &'a ParamMap,
    pub network: &'a NetworkParams,
}

/// How the tester side of a test drives the IUT.
#[derive(Debug, Clone, PartialEq)]
pub enum TesterSetup {
    /// Tester derived from the specification's state machine for `role`.
    Model {
        role: String,
        policy: Policy,
    },
    Fuzzer(FuzzConfig),
}

impl TesterSetup {
    pub fn role(&self) -> &str {
        match self {
            TesterSetup::Model { role, .. } => role,
            TesterSetup::Fuzzer(f) => &f.role,
        }
    }

    /// Value written to the `service_role` provenance attribute.
    pub fn service_role(&self) -> &'static str {
        match self {
            TesterSetup::Model { .. } => "tester",
            TesterSetup::Fuzzer(_) => "fuzzer",
        }
    }
}

/// Inputs for building an IUT endpoint.
pub struct IutContext<'a> {
    pub service: &'a str,
    pub params: &'a ParamMap,
    pub protocol_params: &'a ParamMap,
    pub seed: u64,
}

pub struct IutInstance {
    /// Protocol role the endpoint plays, e.g. `server`.
    pub role: String,
    pub handler: Box<dyn Handler>,
}

impl fmt::Debug for IutInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IutInstance").field("role", &self.role).finish_non_exhaustive()
    }
}

/// Builds one simulation per test iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFactory {
    pub params: NetworkParams,
}

impl SimFactory {
    pub fn build(&self, seed: u64, experiment: &str) -> Result<Simulation, SimError> {
        let mut params = self.params.clone();
        params.seed = seed;
        Simulation::with_experiment(params, experiment)
    }
}

/// Wraps a test run. The only hook is post-run summarisation of a trace.
pub trait ExecutionEnv: Send + Sync {
    fn name(&self) -> &str;
    fn metrics(&self, trace: &Trace) -> Option<serde_json::Value>;
}

pub type TesterFactory = Arc<dyn Fn(&ParamMap) -> Result<TesterSetup, FactoryError> + Send + Sync>;
pub type IutFactory = Arc<dyn Fn(&IutContext<'_>) -> Result<IutInstance, FactoryError> + Send + Sync>;
pub type ExecutionFactory = Arc<dyn Fn(&ParamMap) -> Result<Box<dyn ExecutionEnv>, FactoryError> + Send + Sync>;
pub type NetworkFactory = Arc<dyn Fn(&ParamMap) -> Result<SimFactory, FactoryError> + Send + Sync>;
pub type ProtocolFactory = Arc<dyn Fn(&ProtocolContext<'_>) -> Result<ProtocolSpec, FactoryError> + Send + Sync>;

#[derive(Clone)]
pub enum Factory {
    Tester(TesterFactory),
    Iut(IutFactory),
    ExecutionEnvironment(ExecutionFactory),
    NetworkEnvironment(NetworkFactory),
    Protocol(ProtocolFactory),
}

impl Factory {
    pub fn kind(&self) -> PluginKind {
        match self {
            Factory::Tester(_) => PluginKind::Tester,
            Factory::Iut(_) => PluginKind::Iut,
            Factory::ExecutionEnvironment(_) => PluginKind::ExecutionEnvironment,
            Factory::NetworkEnvironment(_) => PluginKind::NetworkEnvironment,
            Factory::Protocol(_) => PluginKind::Protocol,
        }
    }

    pub(super) fn same_as(&self, other: &Factory) -> bool {
        fn addr<T: ?Sized>(a: &Arc<T>) -> *const () {
            Arc::as_ptr(a) as *const ()
        }
        match (self, other) {
            (Factory::Tester(a), Factory::Tester(b)) => addr(a) == addr(b),
            (Factory::Iut(a), Factory::Iut(b)) => addr(a) == addr(b),
            (Factory::ExecutionEnvironment(a), Factory::ExecutionEnvironment(b)) => addr(a) == addr(b),
            (Factory::NetworkEnvironment(a), Factory::NetworkEnvironment(b)) => addr(a) == addr(b),
            (Factory::Protocol(a), Factory::Protocol(b)) => addr(a) == addr(b),
            _ => false,
        }
    }
}
