//! Compiled-in plugin catalog. Plugins are registered during a build phase,
//! after which the registry is sealed and read-only.

pub mod builtin;
mod instances;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::config::SchemaField;

pub use instances::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PluginKind {
    Tester,
    Iut,
    ExecutionEnvironment,
    NetworkEnvironment,
    Protocol,
}

impl PluginKind {
    pub const ALL: [PluginKind; 5] = [
        PluginKind::Tester,
        PluginKind::Iut,
        PluginKind::ExecutionEnvironment,
        PluginKind::NetworkEnvironment,
        PluginKind::Protocol,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PluginKind::Tester => "Tester",
            PluginKind::Iut => "Iut",
            PluginKind::ExecutionEnvironment => "ExecutionEnvironment",
            PluginKind::NetworkEnvironment => "NetworkEnvironment",
            PluginKind::Protocol => "Protocol",
        }
    }
}

impl fmt::Display for PluginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PluginKind {
    type Err = String;

    /// Accepts the canonical name in any case, with or without underscores.
    fn from_str(s: &str) -> Result<Self, String> {
        let norm: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        PluginKind::ALL.into_iter().find(|k| k.as_str().to_ascii_lowercase() == norm).ok_or_else(|| {
            let names: Vec<_> = PluginKind::ALL.iter().map(|k| k.as_str()).collect();
            format!("unknown plugin kind `{s}` (expected one of {})", names.join(", "))
        })
    }
}

pub struct PluginDescriptor {
    pub kind: PluginKind,
    pub name: String,
    pub version: String,
    pub description: String,
    pub schema: Vec<SchemaField>,
    pub factory: Factory,
}

impl fmt::Debug for PluginDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PluginDescriptor")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("version", &self.version)
            .field("schema", &self.schema)
            .finish_non_exhaustive()
    }
}

/// Factories compare by identity.
impl PartialEq for PluginDescriptor {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.name == other.name
            && self.version == other.version
            && self.description == other.description
            && self.schema == other.schema
            && self.factory.same_as(&other.factory)
    }
}

impl PluginDescriptor {
    pub fn new(name: &str, version: &str, schema: Vec<SchemaField>, factory: Factory) -> Self {
        PluginDescriptor {
            kind: factory.kind(),
            name: name.into(),
            version: version.into(),
            description: String::new(),
            schema,
            factory,
        }
    }

    pub fn describe(mut self, text: &str) -> Self {
        self.description = text.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("plugin {kind}/{name} is already registered")]
    Duplicate { kind: PluginKind, name: String },
    #[error("registry is sealed; cannot register {kind}/{name}")]
    Sealed { kind: PluginKind, name: String },
    #[error("registry must be sealed before plugins are resolved")]
    NotSealed,
    #[error("plugin {kind}/{name} declares schema key `{key}` more than once")]
    DuplicateSchemaKey { kind: PluginKind, name: String, key: String },
    #[error("no {kind} plugin named `{name}`; available: {}", available.join(", "))]
    NotFound { kind: PluginKind, name: String, available: Vec<String> },
}

#[derive(Debug, Default)]
pub struct PluginRegistry {
    entries: BTreeMap<(PluginKind, String), Arc<PluginDescriptor>>,
    sealed: bool,
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: PluginDescriptor) -> Result<(), RegistryError> {
        let key = (descriptor.kind, descriptor.name.clone());
        if self.sealed {
            return Err(RegistryError::Sealed { kind: key.0, name: key.1 });
        }
        if self.entries.contains_key(&key) {
            return Err(RegistryError::Duplicate { kind: key.0, name: key.1 });
        }
        for (i, f) in descriptor.schema.iter().enumerate() {
            if descriptor.schema[..i].iter().any(|g| g.key == f.key) {
                return Err(RegistryError::DuplicateSchemaKey { kind: key.0, name: key.1, key: f.key.clone() });
            }
        }
        self.entries.insert(key, Arc::new(descriptor));
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn resolve(&self, kind: PluginKind, name: &str) -> Result<Arc<PluginDescriptor>, RegistryError> {
        if !self.sealed {
            return Err(RegistryError::NotSealed);
        }
        self.entries.get(&(kind, name.to_string())).cloned().ok_or_else(|| RegistryError::NotFound {
            kind,
            name: name.into(),
            available: self.list_by_kind(kind).iter().map(|d| d.name.clone()).collect(),
        })
    }

    /// Descriptors of one kind, sorted by name.
    pub fn list_by_kind(&self, kind: PluginKind) -> Vec<Arc<PluginDescriptor>> {
        self.entries.iter().filter(|((k, _), _)| *k == kind).map(|(_, d)| d.clone()).collect()
    }

    /// Every descriptor, sorted by kind then name.
    pub fn list_all(&self) -> Vec<Arc<PluginDescriptor>> {
        self.entries.values().cloned().collect()
    }
}
