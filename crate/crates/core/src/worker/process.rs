use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde_json::Value;

use super::protocol::{
    decode_worker_message, encode_host_message, EnumerateReply, HostMessage, WorkerMessage,
    WorkerRequest, WorkerResponse,
};
use crate::execution::{InvocationContext, InvocationResult, RuntimeKind};
use crate::observability::DebugOutput;
use crate::registry::DeployedFunction;

const MAX_BACKOFF: Duration = Duration::from_secs(5);
const FIRST_BACKOFF: Duration = Duration::from_millis(100);

/// How to start a worker: `<program> <args...> <source-file>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    /// `SNAFU_WORKER` if set, otherwise a `snafu-worker` executable next to
    /// the running binary (or one directory up, for test executables).
    pub fn discover() -> Option<Self> {
        if let Some(p) = std::env::var_os(crate::ENV_WORKER) {
            return Some(Self::new(p));
        }
        let exe = std::env::current_exe().ok()?;
        let name = format!("snafu-worker{}", std::env::consts::EXE_SUFFIX);
        exe.ancestors()
            .skip(1)
            .take(2)
            .map(|d| d.join(&name))
            .find(|p| p.is_file())
            .map(Self::new)
    }
}

/// Answers calls a worker makes on behalf of one of its requests.
pub trait CallbackHandler: Send + Sync {
    fn invoke(&self, parent: &InvocationContext, function: &str, event: Value) -> InvocationResult;
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    Timeout,
    /// The process died or could not be written to.
    Terminated(String),
}

enum Reply {
    Response(WorkerResponse),
    Enumerated(EnumerateReply),
}

struct Pending {
    ctx: Option<InvocationContext>,
    tx: mpsc::SyncSender<Reply>,
}

struct Shared {
    label: String,
    stdin: Mutex<Option<ChildStdin>>,
    pending: Mutex<HashMap<String, Pending>>,
    alive: AtomicBool,
    callback: Option<Arc<dyn CallbackHandler>>,
}

impl Shared {
    fn send(&self, msg: &HostMessage) -> Result<(), CallError> {
        let bytes = encode_host_message(msg).map_err(|e| CallError::Terminated(e.to_string()))?;
        let mut stdin = self.stdin.lock();
        let Some(w) = stdin.as_mut() else {
            return Err(CallError::Terminated("worker terminated: input closed".into()));
        };
        w.write_all(&bytes)
            .and_then(|_| w.flush())
            .map_err(|e| CallError::Terminated(format!("worker terminated: {e}")))
    }

    fn fail_all(&self, why: &str) {
        self.alive.store(false, Ordering::SeqCst);
        let drained: Vec<(String, Pending)> = self.pending.lock().drain().collect();
        for (id, p) in drained {
            let _ = p
                .tx
                .send(Reply::Response(WorkerResponse::error(id, why, 0.0)));
        }
    }
}

/// One running worker process.
pub struct WorkerProcess {
    shared: Arc<Shared>,
    child: Mutex<Child>,
    pid: u32,
}

impl std::fmt::Debug for WorkerProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerProcess")
            .field("label", &self.shared.label)
            .field("pid", &self.pid)
            .finish()
    }
}

impl WorkerProcess {
    pub fn spawn(
        cmd: &WorkerCommand,
        source: &Path,
        env: &[(String, String)],
        label: &str,
        debug: Arc<DebugOutput>,
        callback: Option<Arc<dyn CallbackHandler>>,
    ) -> std::io::Result<Self> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .arg(source)
            .envs(env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let pid = child.id();
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let shared = Arc::new(Shared {
            label: label.to_string(),
            stdin: Mutex::new(child.stdin.take()),
            pending: Mutex::new(HashMap::new()),
            alive: AtomicBool::new(true),
            callback,
        });

        let s = shared.clone();
        std::thread::Builder::new()
            .name(format!("worker-out-{pid}"))
            .spawn(move || read_replies(&s, BufReader::new(stdout)))?;
        let tag = label.to_string();
        std::thread::Builder::new()
            .name(format!("worker-err-{pid}"))
            .spawn(move || {
                for line in BufReader::new(stderr).lines() {
                    let Ok(line) = line else { break };
                    debug.emit_with("worker", || format!("{tag}: {line}"));
                }
            })?;

        Ok(Self {
            shared,
            child: Mutex::new(child),
            pid,
        })
    }

    pub fn pid(&self) -> u32 {
        self.pid
    }

    pub fn is_alive(&self) -> bool {
        self.shared.alive.load(Ordering::SeqCst)
    }

    fn register(&self, id: &str, ctx: Option<InvocationContext>) -> Result<mpsc::Receiver<Reply>, CallError> {
        let (tx, rx) = mpsc::sync_channel(1);
        let mut pending = self.shared.pending.lock();
        if !self.is_alive() {
            return Err(CallError::Terminated("worker terminated".into()));
        }
        pending.insert(id.to_string(), Pending { ctx, tx });
        Ok(rx)
    }

    fn wait(&self, id: &str, rx: mpsc::Receiver<Reply>, timeout: Duration) -> Result<Reply, CallError> {
        match rx.recv_timeout(timeout) {
            Ok(r) => Ok(r),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().remove(id);
                Err(CallError::Timeout)
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(CallError::Terminated("worker terminated".into()))
            }
        }
    }

    /// Sends one request and waits for the response with the same id.
    pub fn call(&self, req: WorkerRequest, timeout: Duration) -> Result<WorkerResponse, CallError> {
        let id = req.id.clone();
        let rx = self.register(&id, Some(req.context.clone()))?;
        if let Err(e) = self.shared.send(&HostMessage::Request(req)) {
            self.shared.pending.lock().remove(&id);
            return Err(e);
        }
        match self.wait(&id, rx, timeout)? {
            Reply::Response(r) => Ok(r),
            Reply::Enumerated(_) => Err(CallError::Terminated("unexpected enumerate reply".into())),
        }
    }

    /// Asks the worker for the functions found in its source.
    pub fn enumerate(&self, timeout: Duration) -> Result<EnumerateReply, CallError> {
        let id = format!("enum-{}", uuid::Uuid::new_v4());
        let rx = self.register(&id, None)?;
        self.shared.send(&HostMessage::Enumerate { id: id.clone() })?;
        match self.wait(&id, rx, timeout)? {
            Reply::Enumerated(e) => Ok(e),
            Reply::Response(r) => Err(CallError::Terminated(
                r.message.unwrap_or_else(|| "enumerate failed".into()),
            )),
        }
    }

    /// Closes the worker's input and waits for it to exit.
    pub fn finish(self, grace: Duration) {
        self.shared.stdin.lock().take();
        let deadline = Instant::now() + grace;
        let mut child = self.child.lock();
        loop {
            match child.try_wait() {
                Ok(Some(_)) | Err(_) => return,
                Ok(None) if Instant::now() >= deadline => break,
                Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            }
        }
        let _ = child.kill();
        let _ = child.wait();
    }

    pub fn kill(&self) {
        let mut child = self.child.lock();
        let _ = child.kill();
        let _ = child.wait();
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        self.shared.stdin.lock().take();
        let mut child = self.child.lock();
        if let Ok(None) = child.try_wait() {
            let _ = child.kill();
        }
        let _ = child.wait();
    }
}

fn read_replies(shared: &Arc<Shared>, stdout: impl BufRead) {
    for line in stdout.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match decode_worker_message(line.as_bytes()) {
            Ok(WorkerMessage::Response(r)) => {
                if let Some(p) = shared.pending.lock().remove(&r.id) {
                    let _ = p.tx.send(Reply::Response(r));
                }
            }
            Ok(WorkerMessage::Enumerated(e)) => {
                if let Some(p) = shared.pending.lock().remove(&e.id) {
                    let _ = p.tx.send(Reply::Enumerated(e));
                }
            }
            Ok(WorkerMessage::Callback(cb)) => {
                let parent = shared
                    .pending
                    .lock()
                    .get(&cb.parent)
                    .and_then(|p| p.ctx.clone());
                let s = shared.clone();
                // the reader must keep routing replies while the callback runs
                std::thread::spawn(move || {
                    let result = match (&s.callback, parent) {
                        (Some(h), Some(ctx)) => h.invoke(&ctx, &cb.function, cb.event),
                        (None, _) => InvocationResult::function_error(
                            "callbacks are not supported by this host",
                            0.0,
                        ),
                        (_, None) => InvocationResult::function_error(
                            format!("unknown parent request {}", cb.parent),
                            0.0,
                        ),
                    };
                    let reply = WorkerResponse::from_result(cb.id, &result);
                    let _ = s.send(&HostMessage::CallbackReply(reply));
                });
            }
            Err(e) => {
                // a worker that breaks the framing cannot be trusted with
                // the requests it still holds
                tracing::warn!("{}: unreadable worker output: {e}", shared.label);
                shared.stdin.lock().take();
                shared.fail_all(&format!("worker protocol violation: {e}"));
                return;
            }
        }
    }
    shared.fail_all("worker terminated");
}

/// A persistent worker that is restarted after a crash or timeout.
pub struct SharedWorker {
    slot: Mutex<Option<Arc<WorkerProcess>>>,
    failures: AtomicU64,
    spawns: AtomicU64,
}

impl SharedWorker {
    fn new() -> Self {
        Self {
            slot: Mutex::new(None),
            failures: AtomicU64::new(0),
            spawns: AtomicU64::new(0),
        }
    }

    /// Delay before the next restart: none for the first, then 100 ms
    /// doubling up to 5 s.
    pub fn backoff(consecutive_failures: u64) -> Duration {
        match consecutive_failures {
            0 | 1 => Duration::ZERO,
            n => {
                let exp = (n - 2).min(16) as u32;
                (FIRST_BACKOFF * 2u32.pow(exp)).min(MAX_BACKOFF)
            }
        }
    }

    fn get(&self, spawn: impl FnOnce() -> std::io::Result<WorkerProcess>) -> std::io::Result<Arc<WorkerProcess>> {
        let mut slot = self.slot.lock();
        if let Some(p) = slot.as_ref().filter(|p| p.is_alive()) {
            return Ok(p.clone());
        }
        let delay = Self::backoff(self.failures.load(Ordering::SeqCst));
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let p = Arc::new(spawn()?);
        self.spawns.fetch_add(1, Ordering::SeqCst);
        *slot = Some(p.clone());
        Ok(p)
    }

    fn retire(&self, p: &Arc<WorkerProcess>) {
        let mut slot = self.slot.lock();
        if slot.as_ref().is_some_and(|cur| Arc::ptr_eq(cur, p)) {
            slot.take();
            self.failures.fetch_add(1, Ordering::SeqCst);
        }
        drop(slot);
        p.kill();
    }

    pub fn pid(&self) -> Option<u32> {
        self.slot.lock().as_ref().map(|p| p.pid())
    }

    pub fn spawn_count(&self) -> u64 {
        self.spawns.load(Ordering::SeqCst)
    }
}

type PoolKey = (String, String);

/// Worker processes of one host.
pub struct WorkerPool {
    command: Option<WorkerCommand>,
    debug: Arc<DebugOutput>,
    callback: Mutex<Option<Arc<dyn CallbackHandler>>>,
    shared: Mutex<HashMap<PoolKey, (u64, Arc<SharedWorker>)>>,
    spawns: AtomicU64,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("command", &self.command)
            .field("spawns", &self.spawn_count())
            .finish()
    }
}

impl WorkerPool {
    pub fn new(command: Option<WorkerCommand>, debug: Arc<DebugOutput>) -> Self {
        Self {
            command,
            debug,
            callback: Mutex::new(None),
            shared: Mutex::new(HashMap::new()),
            spawns: AtomicU64::new(0),
        }
    }

    pub fn set_callback(&self, handler: Arc<dyn CallbackHandler>) {
        *self.callback.lock() = Some(handler);
    }

    pub fn command(&self) -> Option<&WorkerCommand> {
        self.command.as_ref()
    }

    /// Processes started so far, in either mode.
    pub fn spawn_count(&self) -> u64 {
        self.spawns.load(Ordering::SeqCst)
    }

    /// The persistent worker serving a function, if one was started.
    pub fn shared_worker(&self, tenant: &str, name: &str) -> Option<Arc<SharedWorker>> {
        self.shared
            .lock()
            .get(&(tenant.to_string(), name.to_string()))
            .map(|(_, w)| w.clone())
    }

    fn spawn(&self, deployed: &DeployedFunction) -> std::io::Result<WorkerProcess> {
        let cmd = self.command.as_ref().ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::NotFound, "no worker executable configured")
        })?;
        let source = deployed
            .source_path()
            .map_err(std::io::Error::other)?;
        let env: Vec<(String, String)> = deployed
            .unit
            .config
            .environment
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let label = format!("{}/{}", deployed.unit.tenant, deployed.unit.name);
        let p = WorkerProcess::spawn(
            cmd,
            source,
            &env,
            &label,
            self.debug.clone(),
            self.callback.lock().clone(),
        )?;
        self.spawns.fetch_add(1, Ordering::SeqCst);
        Ok(p)
    }

    fn shared_for(&self, deployed: &DeployedFunction) -> Arc<SharedWorker> {
        let key = (deployed.unit.tenant.clone(), deployed.unit.name.clone());
        let mut map = self.shared.lock();
        match map.get(&key) {
            Some((v, w)) if *v == deployed.version => w.clone(),
            _ => {
                // a redeployed unit gets a fresh worker; the old one exits
                // when its last in-flight call drops it
                let w = Arc::new(SharedWorker::new());
                map.insert(key, (deployed.version, w.clone()));
                w
            }
        }
    }

    /// Runs one invocation in a worker of the given kind.
    pub fn execute(
        &self,
        deployed: &DeployedFunction,
        event: Value,
        ctx: &InvocationContext,
        kind: RuntimeKind,
    ) -> InvocationResult {
        let timeout_ms = deployed.unit.config.timeout_ms;
        let timeout = Duration::from_millis(timeout_ms);
        let req = WorkerRequest {
            id: ctx.request_id.clone(),
            handler: deployed.unit.handler.clone(),
            event,
            context: ctx.clone(),
        };
        let start = Instant::now();
        let ms = |s: Instant| s.elapsed().as_secs_f64() * 1000.0;

        if kind == RuntimeKind::ExternalNonshared {
            let p = match self.spawn(deployed) {
                Ok(p) => p,
                Err(e) => {
                    return InvocationResult::function_error(format!("executor unavailable: {e}"), 0.0)
                }
            };
            let r = p.call(req, timeout);
            p.finish(Duration::from_millis(500));
            return match r {
                Ok(resp) => resp.into_invocation_result(),
                Err(CallError::Timeout) => InvocationResult::timeout(timeout_ms, ms(start)),
                Err(CallError::Terminated(m)) => InvocationResult::function_error(m, ms(start)),
            };
        }

        let worker = self.shared_for(deployed);
        let p = match worker.get(|| self.spawn(deployed)) {
            Ok(p) => p,
            Err(e) => {
                return InvocationResult::function_error(format!("executor unavailable: {e}"), 0.0)
            }
        };
        match p.call(req, timeout) {
            Ok(resp) => {
                worker.failures.store(0, Ordering::SeqCst);
                resp.into_invocation_result()
            }
            Err(CallError::Timeout) => {
                worker.retire(&p);
                InvocationResult::timeout(timeout_ms, ms(start))
            }
            Err(CallError::Terminated(m)) => {
                worker.retire(&p);
                InvocationResult::function_error(m, ms(start))
            }
        }
    }

    /// Function names a worker finds in `source`.
    pub fn enumerate(&self, source: &Path, timeout: Duration) -> Result<EnumerateReply, String> {
        let cmd = self
            .command
            .as_ref()
            .ok_or("no worker executable configured")?;
        let p = WorkerProcess::spawn(cmd, source, &[], "enumerate", self.debug.clone(), None)
            .map_err(|e| format!("executor unavailable: {e}"))?;
        self.spawns.fetch_add(1, Ordering::SeqCst);
        let r = p.enumerate(timeout).map_err(|e| format!("{e:?}"));
        p.finish(Duration::from_millis(500));
        r
    }
}
