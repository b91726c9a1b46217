use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use notify::{EventKind, RecursiveMode, Watcher};
use serde_json::json;

use super::{Dispatch, Trigger};
use crate::{Error, Result};

pub const DEBOUNCE: Duration = Duration::from_millis(100);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ChangeKind {
    Created,
    Modified,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Created => "created",
            ChangeKind::Modified => "modified",
        }
    }
}

/// Collapses bursts of events per path. The kind of a burst is the kind
/// of its first event.
#[derive(Debug, Default)]
pub struct Debouncer {
    pending: HashMap<PathBuf, (ChangeKind, Instant)>,
}

impl Debouncer {
    pub fn record(&mut self, path: PathBuf, kind: ChangeKind, now: Instant) {
        self.pending
            .entry(path)
            .and_modify(|(_, last)| *last = now)
            .or_insert((kind, now));
    }

    /// Paths quiet for at least the debounce period.
    pub fn due(&mut self, now: Instant) -> Vec<(PathBuf, ChangeKind)> {
        let mut out = Vec::new();
        self.pending.retain(|p, (kind, last)| {
            if now.duration_since(*last) >= DEBOUNCE {
                out.push((p.clone(), *kind));
                false
            } else {
                true
            }
        });
        out.sort();
        out
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct FsWatchSpec {
    pub path: PathBuf,
    pub glob: String,
    pub target: String,
}

/// Invokes a function for files created or modified under a directory.
pub struct FsTrigger {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

fn make_watcher(root: &Path, tx: mpsc::Sender<notify::Result<notify::Event>>) -> notify::Result<notify::RecommendedWatcher> {
    let mut w = notify::recommended_watcher(move |ev| {
        let _ = tx.send(ev);
    })?;
    w.watch(root, RecursiveMode::Recursive)?;
    Ok(w)
}

impl FsTrigger {
    pub fn start(spec: FsWatchSpec, dispatch: Dispatch) -> Result<Self> {
        if !spec.path.is_dir() {
            return Err(Error::Config(format!(
                "watched path {} is not a directory",
                spec.path.display()
            )));
        }
        let pattern = glob::Pattern::new(&spec.glob)
            .map_err(|e| Error::Config(format!("bad glob {:?}: {e}", spec.glob)))?;
        let root = spec.path.canonicalize()?;
        let (tx, rx) = mpsc::channel();
        let watcher = make_watcher(&root, tx.clone())
            .map_err(|e| Error::Config(format!("cannot watch {}: {e}", root.display())))?;
        let stop = Arc::new(AtomicBool::new(false));
        let s = stop.clone();
        let thread = std::thread::Builder::new()
            .name(format!("fs-trigger-{}", spec.target))
            .spawn(move || {
                let mut watcher = Some(watcher);
                let mut debouncer = Debouncer::default();
                while !s.load(Ordering::Relaxed) {
                    match rx.recv_timeout(Duration::from_millis(25)) {
                        Ok(Ok(ev)) => {
                            let kind = match ev.kind {
                                EventKind::Create(_) => ChangeKind::Created,
                                EventKind::Modify(_) => ChangeKind::Modified,
                                _ => continue,
                            };
                            for p in ev.paths {
                                debouncer.record(p, kind, Instant::now());
                            }
                        }
                        Ok(Err(e)) => {
                            tracing::warn!("file watch on {} lost ({e}); re-establishing", root.display());
                            watcher = None;
                            match make_watcher(&root, tx.clone()) {
                                Ok(w) => watcher = Some(w),
                                Err(e) => tracing::warn!("cannot re-watch {}: {e}", root.display()),
                            }
                        }
                        Err(mpsc::RecvTimeoutError::Timeout) => {}
                        Err(mpsc::RecvTimeoutError::Disconnected) => break,
                    }
                    if watcher.is_none() && !s.load(Ordering::Relaxed) {
                        watcher = make_watcher(&root, tx.clone()).ok();
                    }
                    for (path, kind) in debouncer.due(Instant::now()) {
                        if !path.is_file() {
                            continue;
                        }
                        let Ok(rel) = path.strip_prefix(&root) else { continue };
                        let rel = rel.to_string_lossy().replace('\\', "/");
                        let name_matches = path
                            .file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| pattern.matches(n));
                        if !(pattern.matches(&rel) || name_matches) {
                            continue;
                        }
                        let r = dispatch(&spec.target, json!({ "path": rel, "kind": kind.as_str() }));
                        if !r.is_ok() {
                            tracing::warn!("fs trigger {} failed: {}", spec.target, r.message());
                        }
                    }
                }
                drop(watcher);
            })?;
        Ok(Self {
            stop,
            thread: Some(thread),
        })
    }
}

impl Trigger for FsTrigger {
    fn name(&self) -> &str {
        "fs"
    }

    fn stop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for FsTrigger {
    fn drop(&mut self) {
        Trigger::stop(self);
    }
}
