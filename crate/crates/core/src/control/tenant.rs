use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use parking_lot::Mutex;

use super::{parse_listening_line, InstanceConfig};
use crate::auth::AuthMode;
use crate::host::Host;
use crate::registry::loader::write_unit_dir;
use crate::registry::DEFAULT_TENANT;
use crate::{Error, Result};

const STARTUP_TIMEOUT: Duration = Duration::from_secs(15);

struct TenantChild {
    child: Child,
    url: String,
    _stdin: ChildStdin,
    _functions: tempfile::TempDir,
}

impl Drop for TenantChild {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

type Slot = Arc<Mutex<Option<TenantChild>>>;

/// Launches one child instance per tenant on first use and routes that
/// tenant's requests to it. Children are killed when the spawner is
/// dropped.
pub struct TenantSpawner {
    program: PathBuf,
    base: InstanceConfig,
    children: Mutex<HashMap<String, Slot>>,
    spawns: AtomicU64,
    respawns: AtomicU64,
}

impl std::fmt::Debug for TenantSpawner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TenantSpawner")
            .field("program", &self.program)
            .field("spawns", &self.spawns.load(Ordering::Relaxed))
            .finish()
    }
}

impl TenantSpawner {
    pub fn new(base: InstanceConfig) -> Result<Self> {
        let program = control_program().ok_or_else(|| {
            Error::Config("cannot find the snafu-control executable for tenant instances".into())
        })?;
        Ok(Self::with_program(program, base))
    }

    pub fn with_program(program: PathBuf, base: InstanceConfig) -> Self {
        Self {
            program,
            base,
            children: Mutex::new(HashMap::new()),
            spawns: AtomicU64::new(0),
            respawns: AtomicU64::new(0),
        }
    }

    pub fn spawn_count(&self) -> u64 {
        self.spawns.load(Ordering::Relaxed)
    }

    pub fn respawn_count(&self) -> u64 {
        self.respawns.load(Ordering::Relaxed)
    }

    fn slot(&self, tenant: &str) -> Slot {
        self.children.lock().entry(tenant.to_string()).or_default().clone()
    }

    pub fn is_running(&self, tenant: &str) -> bool {
        let slot = self.slot(tenant);
        let mut g = slot.lock();
        matches!(g.as_mut().map(|c| c.child.try_wait()), Some(Ok(None)))
    }

    /// Child process id serving a tenant, if one is running.
    pub fn pid(&self, tenant: &str) -> Option<u32> {
        let slot = self.slot(tenant);
        let g = slot.lock();
        g.as_ref().map(|c| c.child.id())
    }

    /// URL of the tenant's instance, starting it when needed. Concurrent
    /// callers for one tenant wait for a single start.
    pub fn url_for(&self, tenant: &str, host: &Host) -> Result<String> {
        let slot = self.slot(tenant);
        let mut g = slot.lock();
        if let Some(c) = g.as_mut() {
            match c.child.try_wait() {
                Ok(None) => return Ok(c.url.clone()),
                status => {
                    tracing::warn!("instance for tenant {tenant} exited ({status:?}); respawning");
                    self.respawns.fetch_add(1, Ordering::Relaxed);
                    *g = None;
                }
            }
        }
        let child = self.spawn(tenant, host)?;
        let url = child.url.clone();
        *g = Some(child);
        Ok(url)
    }

    fn spawn(&self, tenant: &str, host: &Host) -> Result<TenantChild> {
        // the child gets a snapshot of the shared functions plus the tenant's own
        let dir = tempfile::tempdir()?;
        let all = host.registry().all();
        for d in all.iter().filter(|d| d.unit.tenant == DEFAULT_TENANT) {
            write_unit_dir(dir.path(), &d.unit)?;
        }
        if tenant != DEFAULT_TENANT {
            for d in all.iter().filter(|d| d.unit.tenant == tenant) {
                write_unit_dir(dir.path(), &d.unit)?;
            }
        }

        let cfg = InstanceConfig {
            port: 0,
            forward_target: None,
            per_tenant_spawn: false,
            auth_mode: AuthMode::None,
            accounts_file: None,
            tenant: tenant.to_string(),
            functions_dir: Some(dir.path().to_path_buf()),
            samples: false,
            hot_deploy: false,
            parent_watch: true,
            log_file: self.base.log_file.as_ref().map(|p| {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("snafu");
                let safe: String = tenant
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                    .collect();
                p.with_file_name(format!("{stem}.{safe}.csv"))
            }),
            ..self.base.clone()
        };

        let mut child = Command::new(&self.program)
            .args(cfg.to_args())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Config(format!("cannot start {}: {e}", self.program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        let label = tenant.to_string();
        std::thread::spawn(move || {
            let mut lines = BufReader::new(stdout).lines();
            let mut tx = Some(tx);
            for line in lines.by_ref() {
                let Ok(line) = line else { break };
                if let Some(url) = parse_listening_line(&line) {
                    if let Some(tx) = tx.take() {
                        let _ = tx.send(url.to_string());
                        continue;
                    }
                }
                // pass the child's debug output through
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "[{label}] {line}");
            }
        });

        match rx.recv_timeout(STARTUP_TIMEOUT) {
            Ok(url) => {
                self.spawns.fetch_add(1, Ordering::Relaxed);
                host.debug()
                    .emit_with("spawn", || format!("tenant {tenant} at {url} pid {}", child.id()));
                Ok(TenantChild {
                    child,
                    url,
                    _stdin: stdin,
                    _functions: dir,
                })
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(Error::Config(format!("instance for tenant {tenant} did not start")))
            }
        }
    }
}

/// The control executable: `SNAFU_CONTROL`, this process if it is one, or
/// a `snafu-control` next to this executable or in its parent directory.
pub fn control_program() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("SNAFU_CONTROL") {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    let name = format!("snafu-control{}", std::env::consts::EXE_SUFFIX);
    if exe.file_name().and_then(|n| n.to_str()) == Some(name.as_str()) {
        return Some(exe);
    }
    let dir = exe.parent()?;
    [dir.join(&name), dir.parent()?.join(&name)]
        .into_iter()
        .find(|p| p.is_file())
}
