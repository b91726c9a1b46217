//! The pool of deployed functions.
//!
//! Functions are scoped per tenant. Registering a name that already exists
//! replaces the previous version atomically, which is what hot redeployment
//! relies on. Every successful registration receives a fresh, strictly
//! increasing version number.

pub mod hotdeploy;
pub mod loader;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{ModuleState, RuntimeKind};

pub use hotdeploy::{watch_hot_deploy, HotDeployHandle, RegistryEvent};
pub use loader::{
    load_functions_dir, load_unit_dir, write_unit_dir, ConfigFile, LoadReport, CONFIG_FILE,
};

/// Tenant used when no authenticator is active.
pub const DEFAULT_TENANT: &str = "default";

/// Default per-invocation timeout.
pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionConfig {
    pub timeout_ms: u64,
    pub environment: BTreeMap<String, String>,
    /// Informational only; the host does not enforce memory limits.
    pub memory_hint_mb: Option<u32>,
}

impl Default for FunctionConfig {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            environment: BTreeMap::new(),
            memory_hint_mb: None,
        }
    }
}

/// Where a function's code lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FunctionSource {
    /// A source file on disk, re-read whenever the unit is reloaded.
    Path(PathBuf),
    /// Code uploaded through the control plane.
    Inline { file_name: String, code: Vec<u8> },
}

impl FunctionSource {
    pub fn read(&self) -> std::io::Result<Vec<u8>> {
        match self {
            FunctionSource::Path(p) => std::fs::read(p),
            FunctionSource::Inline { code, .. } => Ok(code.clone()),
        }
    }

    pub fn file_name(&self) -> String {
        match self {
            FunctionSource::Path(p) => p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            FunctionSource::Inline { file_name, .. } => file_name.clone(),
        }
    }
}

/// A deployable function: implementation plus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionUnit {
    pub name: String,
    /// `file.function`
    pub handler: String,
    pub runtime: RuntimeKind,
    pub source: FunctionSource,
    pub config: FunctionConfig,
    pub tenant: String,
}

impl FunctionUnit {
    pub fn new(
        name: impl Into<String>,
        handler: impl Into<String>,
        runtime: RuntimeKind,
        source: FunctionSource,
    ) -> Self {
        Self {
            name: name.into(),
            handler: handler.into(),
            runtime,
            source,
            config: FunctionConfig::default(),
            tenant: DEFAULT_TENANT.to_string(),
        }
    }

    pub fn with_tenant(mut self, tenant: impl Into<String>) -> Self {
        self.tenant = tenant.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidUnit("function name is empty".into()));
        }
        if self.name.contains('/') {
            return Err(Error::InvalidUnit(format!(
                "function name {:?} contains '/'",
                self.name
            )));
        }
        if self.tenant.is_empty() {
            return Err(Error::InvalidUnit("tenant is empty".into()));
        }
        validate_handler(&self.handler)?;
        if self.config.timeout_ms == 0 {
            return Err(Error::InvalidUnit("timeout must be positive".into()));
        }
        Ok(())
    }

    /// The `(file, function)` halves of the handler.
    pub fn handler_parts(&self) -> (&str, &str) {
        self.handler
            .split_once('.')
            .unwrap_or((self.handler.as_str(), ""))
    }
}

pub fn validate_handler(handler: &str) -> Result<()> {
    let dots = handler.matches('.').count();
    if dots != 1 {
        return Err(Error::InvalidUnit(format!(
            "handler {handler:?} must have the form file.function"
        )));
    }
    let (file, func) = handler.split_once('.').unwrap_or_default();
    if file.is_empty() || func.is_empty() {
        return Err(Error::InvalidUnit(format!(
            "handler {handler:?} must have the form file.function"
        )));
    }
    Ok(())
}

/// A unit as it lives in the pool, together with its mutable module state.
#[derive(Debug)]
pub struct DeployedFunction {
    pub unit: FunctionUnit,
    pub version: u64,
    pub module: ModuleState,
    pub(crate) source_file: OnceLock<std::result::Result<SourceFile, String>>,
}

/// A source file a worker process can be pointed at.
#[derive(Debug)]
pub(crate) struct SourceFile {
    pub path: PathBuf,
    _dir: Option<tempfile::TempDir>,
}

impl DeployedFunction {
    fn new(unit: FunctionUnit, version: u64) -> Self {
        Self {
            unit,
            version,
            module: ModuleState::default(),
            source_file: OnceLock::new(),
        }
    }

    /// Path of the unit's source on disk, writing inline code to a private
    /// temporary directory the first time it is needed.
    pub fn source_path(&self) -> std::result::Result<&Path, String> {
        let file = self.source_file.get_or_init(|| match &self.unit.source {
            FunctionSource::Path(p) => Ok(SourceFile {
                path: p.clone(),
                _dir: None,
            }),
            FunctionSource::Inline { file_name, code } => {
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                let path = dir.path().join(file_name);
                std::fs::write(&path, code).map_err(|e| e.to_string())?;
                Ok(SourceFile {
                    path,
                    _dir: Some(dir),
                })
            }
        });
        file.as_ref().map(|f| f.path.as_path()).map_err(Clone::clone)
    }
}

/// Outcome of a successful [`Registry::register`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Registration {
    pub version: u64,
    pub replaced: bool,
}

type Key = (String, String);

/// Thread-safe function pool: many concurrent readers, atomic writers.
#[derive(Debug, Default)]
pub struct Registry {
    units: RwLock<HashMap<Key, Arc<DeployedFunction>>>,
    next_version: AtomicU64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, unit: FunctionUnit) -> Result<Registration> {
        unit.validate()?;
        let version = self.next_version.fetch_add(1, Ordering::Relaxed) + 1;
        let key = (unit.tenant.clone(), unit.name.clone());
        let deployed = Arc::new(DeployedFunction::new(unit, version));
        let replaced = self.units.write().insert(key, deployed).is_some();
        Ok(Registration { version, replaced })
    }

    pub fn lookup(&self, tenant: &str, name: &str) -> Option<Arc<DeployedFunction>> {
        self.units
            .read()
            .get(&(tenant.to_string(), name.to_string()))
            .cloned()
    }

    /// Looks a function up in the tenant's pool, falling back to the shared
    /// default pool.
    pub fn resolve(&self, tenant: &str, name: &str) -> Option<Arc<DeployedFunction>> {
        let units = self.units.read();
        units
            .get(&(tenant.to_string(), name.to_string()))
            .or_else(|| units.get(&(DEFAULT_TENANT.to_string(), name.to_string())))
            .cloned()
    }

    pub fn remove(&self, tenant: &str, name: &str) -> Option<Arc<DeployedFunction>> {
        self.units
            .write()
            .remove(&(tenant.to_string(), name.to_string()))
    }

    pub fn contains(&self, tenant: &str, name: &str) -> bool {
        self.lookup(tenant, name).is_some()
    }

    /// Sorted names in one tenant's pool.
    pub fn list(&self, tenant: &str) -> Vec<String> {
        let mut names: Vec<String> = self
            .units
            .read()
            .keys()
            .filter(|(t, _)| t == tenant)
            .map(|(_, n)| n.clone())
            .collect();
        names.sort();
        names
    }

    /// Every deployed function, sorted by tenant then name.
    pub fn all(&self) -> Vec<Arc<DeployedFunction>> {
        let mut all: Vec<_> = self.units.read().values().cloned().collect();
        all.sort_by(|a, b| {
            (&a.unit.tenant, &a.unit.name).cmp(&(&b.unit.tenant, &b.unit.name))
        });
        all
    }

    pub fn len(&self) -> usize {
        self.units.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
