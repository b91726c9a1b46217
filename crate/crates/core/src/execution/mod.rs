//! Executor configuration, per-call context and results, and the native
//! (in-process) executor.

mod builtins;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, OnceLock};
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::registry::{DeployedFunction, FunctionSource};

pub use builtins::{builtin, builtins, parse_manifest, Builtin, NativeCall, NativeFn};

/// Maximum nesting of recursive invocations.
pub const DEFAULT_RECURSION_LIMIT: u32 = 4096;

/// Endpoint sentinel meaning "dispatch through this host".
pub const LOCAL_ENDPOINT: &str = "local";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuntimeKind {
    Native,
    ExternalShared,
    ExternalNonshared,
}

impl RuntimeKind {
    pub const ALL: [RuntimeKind; 3] = [
        RuntimeKind::Native,
        RuntimeKind::ExternalShared,
        RuntimeKind::ExternalNonshared,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuntimeKind::Native => "native",
            RuntimeKind::ExternalShared => "external-shared",
            RuntimeKind::ExternalNonshared => "external-nonshared",
        }
    }

    pub fn is_external(self) -> bool {
        self != RuntimeKind::Native
    }
}

impl fmt::Display for RuntimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuntimeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuntimeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown runtime {s:?}"))
    }
}

/// The executor kind plus the O/L/A/I flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub kind: RuntimeKind,
    /// O
    pub debug_output: bool,
    /// L
    pub logging: bool,
    /// A
    pub authentication: bool,
    /// I
    pub isolation: bool,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self::new(RuntimeKind::Native)
    }
}

impl ExecutorConfig {
    pub fn new(kind: RuntimeKind) -> Self {
        Self {
            kind,
            debug_output: false,
            logging: false,
            authentication: false,
            isolation: false,
        }
    }

    /// Parses the `--executor` flag value. `native-isolated` sets I.
    pub fn from_flag(flag: &str) -> Result<Self, String> {
        if flag == "native-isolated" {
            let mut cfg = Self::new(RuntimeKind::Native);
            cfg.isolation = true;
            return Ok(cfg);
        }
        flag.parse().map(Self::new)
    }

    /// The `--executor` value selecting this kind and isolation.
    pub fn executor_flag(&self) -> &'static str {
        match (self.kind, self.isolation) {
            (RuntimeKind::Native, true) => "native-isolated",
            (kind, _) => kind.as_str(),
        }
    }

    /// Every point of the 16-element flag space for one kind.
    pub fn space(kind: RuntimeKind) -> Vec<Self> {
        (0u8..16)
            .map(|bits| Self {
                kind,
                debug_output: bits & 1 != 0,
                logging: bits & 2 != 0,
                authentication: bits & 4 != 0,
                isolation: bits & 8 != 0,
            })
            .collect()
    }

    /// Label such as `IP`, `IP+O+L` or `IIP+AWS4+O+L`.
    pub fn label(&self) -> String {
        let mut label = match (self.kind, self.isolation) {
            (RuntimeKind::Native, false) => "IP".to_string(),
            (RuntimeKind::Native, true) => "IIP".to_string(),
            (RuntimeKind::ExternalShared, false) => "EXT-S".to_string(),
            (RuntimeKind::ExternalShared, true) | (RuntimeKind::ExternalNonshared, _) => {
                "EXT-N".to_string()
            }
        };
        if self.authentication {
            label.push_str("+AWS4");
        }
        if self.debug_output {
            label.push_str("+O");
        }
        if self.logging {
            label.push_str("+L");
        }
        label
    }

    /// The kind a unit actually runs under: an external host executor
    /// overrides the unit's runtime, and isolation turns a shared worker
    /// into a fresh one per call.
    pub fn effective_kind(&self, unit_runtime: RuntimeKind) -> RuntimeKind {
        let kind = if self.kind.is_external() {
            self.kind
        } else {
            unit_runtime
        };
        if kind == RuntimeKind::ExternalShared && self.isolation {
            RuntimeKind::ExternalNonshared
        } else {
            kind
        }
    }
}

/// Per-call metadata handed to functions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationContext {
    pub request_id: String,
    pub function_name: String,
    pub tenant: String,
    pub remaining_time_ms: u64,
    /// `local` or an absolute control-plane URL.
    pub invoke_endpoint: String,
    pub depth: u32,
}

impl InvocationContext {
    pub fn new(function_name: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            request_id: new_request_id(),
            function_name: function_name.into(),
            tenant: crate::registry::DEFAULT_TENANT.to_string(),
            remaining_time_ms: timeout_ms,
            invoke_endpoint: LOCAL_ENDPOINT.to_string(),
            depth: 0,
        }
    }

    pub fn is_local(&self) -> bool {
        self.invoke_endpoint == LOCAL_ENDPOINT
    }
}

pub fn new_request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvocationStatus {
    Ok,
    FunctionError,
    Timeout,
}

impl InvocationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            InvocationStatus::Ok => "ok",
            InvocationStatus::FunctionError => "function-error",
            InvocationStatus::Timeout => "timeout",
        }
    }
}

impl fmt::Display for InvocationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvocationResult {
    pub status: InvocationStatus,
    #[serde(
        default,
        deserialize_with = "present_value",
        skip_serializing_if = "Option::is_none"
    )]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub duration_ms: f64,
}

// A present `null` is a value, not an absent one.
fn present_value<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl InvocationResult {
    pub fn ok(value: Value, duration_ms: f64) -> Self {
        Self {
            status: InvocationStatus::Ok,
            value: Some(value),
            error_message: None,
            duration_ms,
        }
    }

    pub fn function_error(message: impl Into<String>, duration_ms: f64) -> Self {
        Self {
            status: InvocationStatus::FunctionError,
            value: None,
            error_message: Some(message.into()),
            duration_ms,
        }
    }

    pub fn timeout(timeout_ms: u64, duration_ms: f64) -> Self {
        Self {
            status: InvocationStatus::Timeout,
            value: None,
            error_message: Some(format!("timed out after {timeout_ms} ms")),
            duration_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == InvocationStatus::Ok
    }

    pub fn message(&self) -> &str {
        self.error_message.as_deref().unwrap_or("")
    }

    /// `Ok(value)` or `Err(message)`.
    pub fn into_result(self) -> Result<Value, String> {
        match self.status {
            InvocationStatus::Ok => Ok(self.value.unwrap_or(Value::Null)),
            _ => Err(self.error_message.unwrap_or_default()),
        }
    }
}

/// Routes a function's calls to other functions.
pub trait Dispatcher: Send + Sync {
    fn dispatch(&self, ctx: &InvocationContext, target: &str, event: Value) -> InvocationResult;
}

/// Mutable module-level state of a deployed native function.
#[derive(Debug, Default)]
pub struct ModuleState {
    pub counter: AtomicU64,
    guard: RwLock<()>,
    loaded: OnceLock<Result<NativeModule, String>>,
}

impl ModuleState {
    /// Restores the module's globals. Waits for in-flight executions.
    pub fn reset(&self) {
        let _excl = self.guard.write();
        self.counter.store(0, Ordering::SeqCst);
    }

    pub fn calls(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}

/// Restores all module-level state of a deployed function.
pub fn reset_isolation_state(deployed: &DeployedFunction) {
    deployed.module.reset();
}

/// A parsed native source manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NativeModule {
    pub exports: Vec<String>,
}

impl NativeModule {
    pub fn load(source: &FunctionSource) -> Result<Self, String> {
        let code = source
            .read()
            .map_err(|e| format!("cannot read {}: {e}", source.file_name()))?;
        Ok(Self {
            exports: parse_manifest(&code)?,
        })
    }

    pub fn resolve(&self, function: &str) -> Option<&'static Builtin> {
        if self.exports.iter().any(|e| e == function) {
            builtin(function)
        } else {
            None
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

fn handler_not_found(handler: &str) -> InvocationResult {
    InvocationResult::function_error(format!("handler not found: {handler}"), 0.0)
}

fn run(b: &Builtin, call: &NativeCall<'_>) -> InvocationResult {
    let start = Instant::now();
    let r = (b.func)(call);
    let ms = elapsed_ms(start);
    match r {
        Ok(v) => InvocationResult::ok(v, ms),
        Err(m) => InvocationResult::function_error(m, ms),
    }
}

/// Runs a native function in-process.
///
/// Without isolation the module is loaded once and its state persists
/// across calls; a call that overruns its timeout is reported as a timeout
/// once it returns. With isolation every call reloads the source into a
/// fresh module on its own thread, and the caller stops waiting at the
/// deadline.
pub fn execute_native(
    deployed: &DeployedFunction,
    event: Value,
    ctx: &InvocationContext,
    isolation: bool,
    dispatcher: Arc<dyn Dispatcher>,
) -> InvocationResult {
    let unit = &deployed.unit;
    let (_, function) = unit.handler_parts();
    let timeout_ms = unit.config.timeout_ms;

    if !isolation {
        let state = &deployed.module;
        let _shared = state.guard.read_recursive();
        let module = match state.loaded.get_or_init(|| NativeModule::load(&unit.source)) {
            Ok(m) => m,
            Err(e) => return InvocationResult::function_error(e.clone(), 0.0),
        };
        let Some(b) = module.resolve(function) else {
            return handler_not_found(&unit.handler);
        };
        let call = NativeCall {
            event: &event,
            ctx,
            state,
            dispatcher: dispatcher.as_ref(),
        };
        let r = run(b, &call);
        if r.duration_ms > timeout_ms as f64 {
            return InvocationResult::timeout(timeout_ms, r.duration_ms);
        }
        return r;
    }

    let module = match NativeModule::load(&unit.source) {
        Ok(m) => m,
        Err(e) => return InvocationResult::function_error(e, 0.0),
    };
    let Some(b) = module.resolve(function) else {
        return handler_not_found(&unit.handler);
    };
    let (tx, rx) = mpsc::sync_channel(1);
    let owned_ctx = ctx.clone();
    let spawned = std::thread::Builder::new()
        .name(format!("isolated-{}", unit.name))
        .spawn(move || {
            let state = ModuleState::default();
            let call = NativeCall {
                event: &event,
                ctx: &owned_ctx,
                state: &state,
                dispatcher: dispatcher.as_ref(),
            };
            let _ = tx.send(run(b, &call));
        });
    if spawned.is_err() {
        return InvocationResult::function_error("executor unavailable", 0.0);
    }
    let start = Instant::now();
    match rx.recv_timeout(Duration::from_millis(timeout_ms)) {
        Ok(r) => r,
        Err(mpsc::RecvTimeoutError::Timeout) => {
            InvocationResult::timeout(timeout_ms, elapsed_ms(start))
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            InvocationResult::function_error("function panicked", elapsed_ms(start))
        }
    }
}

/// Number of calls a top-level `fib(n)` makes: 2·F(n) − 1.
pub fn fib_call_count(n: u64) -> Result<u64, String> {
    if n < 1 {
        return Err("fib_call_count requires n >= 1".into());
    }
    let (mut a, mut b) = (1u64, 1u64);
    for _ in 2..n {
        let next = a.checked_add(b).ok_or("fib_call_count overflow")?;
        a = b;
        b = next;
    }
    Ok(2 * b - 1)
}
