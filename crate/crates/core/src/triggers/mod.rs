//! Ways of invoking functions other than HTTP: cron schedules, file system
//! changes and an interactive prompt.

pub mod cron;
pub mod fswatch;
pub mod repl;
pub mod scheduler;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use crate::execution::InvocationResult;
use crate::host::{Host, InvokeRequest};
use crate::{Error, Result};

pub use cron::{CronError, CronSpec};
pub use fswatch::{FsTrigger, FsWatchSpec};
pub use repl::{run_repl, ReplBackend};
pub use scheduler::{CronJob, CronTrigger, Scheduler};

/// Trigger definitions read from the functions directory.
pub const TRIGGERS_FILE: &str = "_triggers.json";

/// Invokes a function by name.
pub type Dispatch = Arc<dyn Fn(&str, Value) -> InvocationResult + Send + Sync>;

pub trait Trigger: Send {
    fn name(&self) -> &str;
    fn stop(&mut self);
}

#[derive(Debug, Clone, Deserialize)]
pub struct CronEntry {
    pub spec: String,
    pub target: String,
    #[serde(default = "empty_event")]
    pub event: Value,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FsEntry {
    pub path: PathBuf,
    #[serde(default = "any_file")]
    pub glob: String,
    pub target: String,
}

fn empty_event() -> Value {
    Value::Object(Default::default())
}

fn any_file() -> String {
    "*".into()
}

/// ```json
/// {"cron": [{"spec": "*/5 * * * *", "target": "counter"}],
///  "fs": [{"path": "inbox", "glob": "*.txt", "target": "echo"}]}
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerFile {
    #[serde(default)]
    pub cron: Vec<CronEntry>,
    #[serde(default)]
    pub fs: Vec<FsEntry>,
}

impl TriggerFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Running triggers. Dropping the handle stops them.
#[derive(Default)]
pub struct TriggerHandle {
    triggers: Vec<Box<dyn Trigger>>,
}

impl TriggerHandle {
    pub fn add(&mut self, t: Box<dyn Trigger>) {
        self.triggers.push(t);
    }

    pub fn names(&self) -> Vec<&str> {
        self.triggers.iter().map(|t| t.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }
}

impl Drop for TriggerHandle {
    fn drop(&mut self) {
        for t in &mut self.triggers {
            t.stop();
        }
    }
}

/// Dispatches into a host under the default tenant.
pub fn host_dispatch(host: Arc<Host>) -> Dispatch {
    Arc::new(move |target: &str, event: Value| {
        match host.invoke(InvokeRequest::new(target, event)) {
            Ok(r) => r,
            Err(e) => InvocationResult::function_error(e.to_string(), 0.0),
        }
    })
}

/// Starts everything in `spec`. Relative watch paths resolve against `base`.
pub fn start(host: Arc<Host>, spec: TriggerFile, base: &Path) -> Result<TriggerHandle> {
    let dispatch = host_dispatch(host);
    let mut handle = TriggerHandle::default();
    let mut jobs = Vec::new();
    for c in spec.cron {
        let parsed = CronSpec::parse(&c.spec).map_err(|e| Error::Config(e.to_string()))?;
        jobs.push(CronJob {
            spec: parsed,
            target: c.target,
            event: c.event,
        });
    }
    if !jobs.is_empty() {
        handle.add(Box::new(CronTrigger::start(jobs, dispatch.clone())));
    }
    for f in spec.fs {
        let path = if f.path.is_absolute() { f.path } else { base.join(f.path) };
        let t = FsTrigger::start(
            FsWatchSpec {
                path,
                glob: f.glob,
                target: f.target,
            },
            dispatch.clone(),
        )?;
        handle.add(Box::new(t));
    }
    Ok(handle)
}
