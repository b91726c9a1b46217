use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FunctionConfig, FunctionSource, FunctionUnit, DEFAULT_TENANT};
use crate::error::{Error, Result};
use crate::execution::RuntimeKind;

pub const CONFIG_FILE: &str = "config.json";

/// On-disk `config.json` of one function directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct ConfigFile {
    pub function_name: String,
    pub handler: String,
    #[serde(default = "default_runtime")]
    pub runtime: String,
    /// Seconds.
    #[serde(default = "default_timeout_s")]
    pub timeout: u64,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
}

fn default_runtime() -> String {
    RuntimeKind::Native.as_str().to_string()
}

fn default_timeout_s() -> u64 {
    super::DEFAULT_TIMEOUT_MS / 1000
}

impl ConfigFile {
    pub fn from_unit(unit: &FunctionUnit) -> Self {
        Self {
            function_name: unit.name.clone(),
            handler: unit.handler.clone(),
            runtime: unit.runtime.as_str().to_string(),
            timeout: unit.config.timeout_ms.div_ceil(1000),
            environment: unit.config.environment.clone(),
        }
    }

    /// Builds a unit from this config. The source is supplied by the caller.
    pub fn into_unit(self, source: FunctionSource) -> Result<FunctionUnit> {
        let runtime: RuntimeKind = self
            .runtime
            .parse()
            .map_err(|e: String| Error::InvalidUnit(e))?;
        if self.timeout == 0 {
            return Err(Error::InvalidUnit("Timeout must be positive".into()));
        }
        let unit = FunctionUnit {
            name: self.function_name,
            handler: self.handler,
            runtime,
            source,
            config: FunctionConfig {
                timeout_ms: self.timeout * 1000,
                environment: self.environment,
                memory_hint_mb: None,
            },
            tenant: DEFAULT_TENANT.to_string(),
        };
        unit.validate()?;
        Ok(unit)
    }
}

/// Result of scanning a functions directory.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub units: Vec<FunctionUnit>,
    /// One message per skipped entry.
    pub warnings: Vec<String>,
}

/// Loads one `<functions_dir>/<name>/` directory.
///
/// The handler's file half names the source file stem; any extension is
/// accepted.
pub fn load_unit_dir(dir: &Path) -> std::result::Result<FunctionUnit, String> {
    let config_path = dir.join(CONFIG_FILE);
    let raw = fs::read(&config_path)
        .map_err(|e| format!("{}: cannot read {CONFIG_FILE}: {e}", dir.display()))?;
    let config: ConfigFile = serde_json::from_slice(&raw)
        .map_err(|e| format!("{}: malformed {CONFIG_FILE}: {e}", config_path.display()))?;
    super::validate_handler(&config.handler).map_err(|e| format!("{}: {e}", dir.display()))?;
    let stem = config.handler.split('.').next().unwrap_or_default();
    let source = find_source(dir, stem).ok_or_else(|| {
        format!(
            "{}: no source file with stem {stem:?} for handler {}",
            dir.display(),
            config.handler
        )
    })?;
    config
        .into_unit(FunctionSource::Path(source))
        .map_err(|e| format!("{}: {e}", dir.display()))
}

fn find_source(dir: &Path, stem: &str) -> Option<PathBuf> {
    let mut candidates: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| p.file_name().is_some_and(|n| n != CONFIG_FILE))
        .filter(|p| p.file_stem().is_some_and(|s| s == stem))
        .collect();
    candidates.sort();
    candidates.into_iter().next()
}

/// Scans `path` for function directories. Invalid entries are skipped and
/// reported in [`LoadReport::warnings`]; only a missing root is fatal.
pub fn load_functions_dir(path: &Path) -> Result<LoadReport> {
    let entries = fs::read_dir(path).map_err(|e| {
        Error::Config(format!("functions directory {}: {e}", path.display()))
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| !n.to_string_lossy().starts_with(['.', '_']))
        })
        .collect();
    dirs.sort();

    let mut report = LoadReport::default();
    for dir in dirs {
        match load_unit_dir(&dir) {
            Ok(unit) => report.units.push(unit),
            Err(msg) => {
                tracing::warn!("skipping function directory: {msg}");
                report.warnings.push(msg);
            }
        }
    }
    Ok(report)
}

/// Writes a unit as `<root>/<name>/config.json` plus its source file.
/// The config is written last so a concurrent watcher never sees a
/// half-written function.
pub fn write_unit_dir(root: &Path, unit: &FunctionUnit) -> Result<PathBuf> {
    let dir = root.join(&unit.name);
    fs::create_dir_all(&dir)?;
    let code = unit.source.read()?;
    let (stem, _) = unit.handler_parts();
    let file_name = unit.source.file_name();
    let file_name = if Path::new(&file_name).file_stem().is_some_and(|s| s == stem) {
        file_name
    } else {
        format!("{stem}.fn")
    };
    fs::write(dir.join(file_name), code)?;
    let config = serde_json::to_vec_pretty(&ConfigFile::from_unit(unit))?;
    fs::write(dir.join(CONFIG_FILE), config)?;
    Ok(dir)
}
