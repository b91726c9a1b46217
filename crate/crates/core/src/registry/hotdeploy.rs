use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use notify::{PollWatcher, RecommendedWatcher, RecursiveMode, Watcher};

use super::{load_unit_dir, Registry, CONFIG_FILE};
use crate::error::{Error, Result};

const DEBOUNCE: Duration = Duration::from_millis(100);
const POLL_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RegistryEvent {
    Registered { name: String, version: u64 },
    Removed { name: String },
    /// A changed directory could not be loaded; the previous version, if
    /// any, stays deployed.
    Warning(String),
}

/// Keeps the watcher alive. Dropping it stops hot deployment.
pub struct HotDeployHandle {
    watcher: Option<Box<dyn Watcher + Send>>,
    thread: Option<JoinHandle<()>>,
    polling: bool,
}

impl HotDeployHandle {
    /// True when the native notification backend was unavailable.
    pub fn is_polling(&self) -> bool {
        self.polling
    }
}

impl Drop for HotDeployHandle {
    fn drop(&mut self) {
        // dropping the watcher closes the event channel
        self.watcher.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl std::fmt::Debug for HotDeployHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HotDeployHandle")
            .field("polling", &self.polling)
            .finish()
    }
}

/// Watches `root` and (re)registers function directories under `tenant`
/// as they change.
pub fn watch_hot_deploy<F>(
    registry: Arc<Registry>,
    root: &Path,
    tenant: &str,
    on_event: F,
) -> Result<HotDeployHandle>
where
    F: Fn(&RegistryEvent) + Send + 'static,
{
    let root = root
        .canonicalize()
        .map_err(|e| Error::Config(format!("functions directory {}: {e}", root.display())))?;
    let (tx, rx) = mpsc::channel::<notify::Result<notify::Event>>();

    let (watcher, polling): (Box<dyn Watcher + Send>, bool) =
        match RecommendedWatcher::new(tx.clone(), notify::Config::default()) {
            Ok(mut w) => match w.watch(&root, RecursiveMode::Recursive) {
                Ok(()) => (Box::new(w), false),
                Err(e) => {
                    tracing::warn!("native file watching unavailable ({e}), polling");
                    (poll_watcher(tx, &root)?, true)
                }
            },
            Err(e) => {
                tracing::warn!("native file watching unavailable ({e}), polling");
                (poll_watcher(tx, &root)?, true)
            }
        };

    let mut state = Reloader {
        registry,
        root: root.clone(),
        tenant: tenant.to_string(),
        by_dir: HashMap::new(),
    };
    state.seed();
    let thread = std::thread::Builder::new()
        .name("hot-deploy".into())
        .spawn(move || state.run(rx, on_event))?;

    Ok(HotDeployHandle {
        watcher: Some(watcher),
        thread: Some(thread),
        polling,
    })
}

fn poll_watcher(
    tx: mpsc::Sender<notify::Result<notify::Event>>,
    root: &Path,
) -> Result<Box<dyn Watcher + Send>> {
    let config = notify::Config::default()
        .with_poll_interval(POLL_INTERVAL)
        .with_compare_contents(true);
    let mut w = PollWatcher::new(tx, config)
        .map_err(|e| Error::Config(format!("file watcher: {e}")))?;
    w.watch(root, RecursiveMode::Recursive)
        .map_err(|e| Error::Config(format!("file watcher: {e}")))?;
    Ok(Box::new(w))
}

struct Reloader {
    registry: Arc<Registry>,
    root: PathBuf,
    tenant: String,
    /// function directory name -> registered function name
    by_dir: HashMap<String, String>,
}

impl Reloader {
    /// Records which names already came from which directory, so deleting a
    /// directory removes a unit loaded before the watcher started.
    fn seed(&mut self) {
        let Ok(entries) = std::fs::read_dir(&self.root) else {
            return;
        };
        for entry in entries.flatten() {
            let dir = entry.path();
            if let Ok(unit) = load_unit_dir(&dir) {
                if self.registry.contains(&self.tenant, &unit.name) {
                    let key = entry.file_name().to_string_lossy().into_owned();
                    self.by_dir.insert(key, unit.name);
                }
            }
        }
    }

    fn run<F: Fn(&RegistryEvent)>(
        mut self,
        rx: mpsc::Receiver<notify::Result<notify::Event>>,
        on_event: F,
    ) {
        let mut pending: HashMap<String, Instant> = HashMap::new();
        loop {
            let wait = pending
                .values()
                .map(|t| (*t + DEBOUNCE).saturating_duration_since(Instant::now()))
                .min()
                .unwrap_or(Duration::from_secs(3600));
            match rx.recv_timeout(wait) {
                Ok(Ok(event)) => {
                    for path in &event.paths {
                        if let Some(dir) = self.function_dir_of(path) {
                            pending.insert(dir, Instant::now());
                        }
                    }
                }
                Ok(Err(e)) => on_event(&RegistryEvent::Warning(format!("watch error: {e}"))),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
            let now = Instant::now();
            let ready: Vec<String> = pending
                .iter()
                .filter(|(_, t)| now.duration_since(**t) >= DEBOUNCE)
                .map(|(d, _)| d.clone())
                .collect();
            for dir in ready {
                pending.remove(&dir);
                for ev in self.reload(&dir) {
                    on_event(&ev);
                }
            }
        }
    }

    /// First path component below the root, or `*` for the root itself.
    fn function_dir_of(&self, path: &Path) -> Option<String> {
        let rel = path.strip_prefix(&self.root).ok()?;
        match rel.components().next() {
            None => Some("*".into()),
            Some(c) => {
                let name = c.as_os_str().to_string_lossy().into_owned();
                (!name.starts_with(['.', '_'])).then_some(name)
            }
        }
    }

    fn reload(&mut self, dir_name: &str) -> Vec<RegistryEvent> {
        if dir_name == "*" {
            let mut names: Vec<String> = std::fs::read_dir(&self.root)
                .map(|it| {
                    it.flatten()
                        .filter(|e| e.path().is_dir())
                        .map(|e| e.file_name().to_string_lossy().into_owned())
                        .filter(|n| !n.starts_with(['.', '_']))
                        .collect()
                })
                .unwrap_or_default();
            names.extend(self.by_dir.keys().cloned());
            names.sort();
            names.dedup();
            return names.iter().flat_map(|d| self.reload(d)).collect();
        }

        let dir = self.root.join(dir_name);
        let mut events = Vec::new();
        if !dir.join(CONFIG_FILE).exists() {
            if let Some(name) = self.by_dir.remove(dir_name) {
                if self.registry.remove(&self.tenant, &name).is_some() {
                    events.push(RegistryEvent::Removed { name });
                }
            }
            return events;
        }
        match load_unit_dir(&dir) {
            Ok(unit) => {
                let unit = unit.with_tenant(self.tenant.clone());
                let name = unit.name.clone();
                // a renamed function retires the old name
                if let Some(old) = self.by_dir.get(dir_name).filter(|o| **o != name) {
                    if self.registry.remove(&self.tenant, old).is_some() {
                        events.push(RegistryEvent::Removed { name: old.clone() });
                    }
                }
                match self.registry.register(unit) {
                    Ok(r) => {
                        self.by_dir.insert(dir_name.to_string(), name.clone());
                        events.push(RegistryEvent::Registered {
                            name,
                            version: r.version,
                        });
                    }
                    Err(e) => events.push(RegistryEvent::Warning(e.to_string())),
                }
            }
            Err(msg) => events.push(RegistryEvent::Warning(msg)),
        }
        events
    }
}
