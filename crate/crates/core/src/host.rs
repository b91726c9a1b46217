//! The host: resolves functions in the registry and runs them under the
//! configured executor, logging and tracing every execution.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Instant;

use serde_json::Value;

use crate::auth::ClientAuth;
use crate::control::{DEPTH_HEADER, FUNCTION_ERROR_HEADER};
use crate::execution::{
    execute_native, new_request_id, Dispatcher, ExecutorConfig, InvocationContext,
    InvocationResult, RuntimeKind, DEFAULT_RECURSION_LIMIT, LOCAL_ENDPOINT,
};
use crate::http::HttpClient;
use crate::observability::debug::DebugOutput;
use crate::observability::log::{CsvLogger, InvocationRecord};
use crate::registry::{Registry, DEFAULT_TENANT};
use crate::worker::{CallbackHandler, WorkerCommand, WorkerPool};
use crate::{Error, Result};

// Stack reserved before each nested in-process invocation.
const STACK_RED_ZONE: usize = 256 * 1024;
const STACK_GROWTH: usize = 4 * 1024 * 1024;

pub struct HostOptions {
    pub executor: ExecutorConfig,
    pub debug: Arc<DebugOutput>,
    /// Set when L is on.
    pub logger: Option<Arc<CsvLogger>>,
    pub worker: Option<WorkerCommand>,
    /// Credentials for invocations this host sends over HTTP.
    pub client_auth: ClientAuth,
    /// Endpoint handed to functions when a request does not name one.
    pub callback: String,
    pub max_depth: u32,
}

impl Default for HostOptions {
    fn default() -> Self {
        Self {
            executor: ExecutorConfig::default(),
            debug: Arc::new(DebugOutput::disabled()),
            logger: None,
            worker: None,
            client_auth: ClientAuth::None,
            callback: LOCAL_ENDPOINT.to_string(),
            max_depth: DEFAULT_RECURSION_LIMIT,
        }
    }
}

impl HostOptions {
    pub fn new(executor: ExecutorConfig) -> Self {
        Self {
            executor,
            ..Default::default()
        }
    }
}

/// One invocation as it enters the host.
#[derive(Clone, Debug)]
pub struct InvokeRequest {
    pub tenant: String,
    pub function: String,
    pub event: Value,
    pub depth: u32,
    /// Overrides the host's callback endpoint.
    pub invoke_endpoint: Option<String>,
    pub request_id: Option<String>,
}

impl InvokeRequest {
    pub fn new(function: impl Into<String>, event: Value) -> Self {
        Self {
            tenant: DEFAULT_TENANT.to_string(),
            function: function.into(),
            event,
            depth: 0,
            invoke_endpoint: None,
            request_id: None,
        }
    }

    pub fn tenant(mut self, tenant: impl Into<String>) -> Self {
        self.tenant = tenant.into();
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HostStats {
    pub executed: u64,
    pub forwarded: u64,
    pub failed: u64,
}

#[derive(Default)]
struct Counters {
    executed: AtomicU64,
    forwarded: AtomicU64,
    failed: AtomicU64,
}

pub struct Host {
    registry: Arc<Registry>,
    config: ExecutorConfig,
    debug: Arc<DebugOutput>,
    logger: Option<Arc<CsvLogger>>,
    pool: WorkerPool,
    client: HttpClient,
    client_auth: ClientAuth,
    callback: String,
    max_depth: u32,
    counters: Counters,
    me: Weak<Host>,
}

impl std::fmt::Debug for Host {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Host")
            .field("config", &self.config)
            .field("callback", &self.callback)
            .field("functions", &self.registry.len())
            .finish()
    }
}

impl Host {
    pub fn new(registry: Arc<Registry>, options: HostOptions) -> Arc<Self> {
        let host = Arc::new_cyclic(|me: &Weak<Host>| Host {
            registry,
            config: options.executor,
            pool: WorkerPool::new(options.worker, options.debug.clone()),
            debug: options.debug,
            logger: options.logger,
            client: HttpClient::new(),
            client_auth: options.client_auth,
            callback: options.callback,
            max_depth: options.max_depth,
            counters: Counters::default(),
            me: me.clone(),
        });
        // the pool must not keep the host alive
        host.pool.set_callback(Arc::new(WeakCallback(Arc::downgrade(&host))));
        host
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn debug(&self) -> &DebugOutput {
        &self.debug
    }

    pub fn logger(&self) -> Option<&Arc<CsvLogger>> {
        self.logger.as_ref()
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }

    pub fn client_auth(&self) -> &ClientAuth {
        &self.client_auth
    }

    pub fn callback(&self) -> &str {
        &self.callback
    }

    pub fn stats(&self) -> HostStats {
        HostStats {
            executed: self.counters.executed.load(Ordering::Relaxed),
            forwarded: self.counters.forwarded.load(Ordering::Relaxed),
            failed: self.counters.failed.load(Ordering::Relaxed),
        }
    }

    /// Records an invocation this host relayed to another instance.
    pub fn record_forward(&self, request_id: &str, tenant: &str, function: &str, duration_ms: f64, status: crate::InvocationStatus) {
        self.counters.forwarded.fetch_add(1, Ordering::Relaxed);
        if let Some(l) = &self.logger {
            l.log(InvocationRecord::now(request_id, tenant, function, "forward", duration_ms, status));
        }
        self.debug
            .emit_with("forward", || format!("{tenant}/{function} id={request_id} {status}"));
    }

    /// Resolves and executes one invocation. Only an unknown function is an
    /// `Err`; everything that happens while running it is in the result.
    pub fn invoke(&self, req: InvokeRequest) -> Result<InvocationResult> {
        let deployed = self
            .registry
            .resolve(&req.tenant, &req.function)
            .ok_or_else(|| Error::NotFound {
                tenant: req.tenant.clone(),
                name: req.function.clone(),
            })?;
        let request_id = req.request_id.unwrap_or_else(new_request_id);
        let endpoint = req.invoke_endpoint.unwrap_or_else(|| self.callback.clone());
        self.debug.emit_with("request", || {
            format!(
                "{}/{} id={} depth={} event={}",
                req.tenant, req.function, request_id, req.depth, req.event
            )
        });

        let kind = self.config.effective_kind(deployed.unit.runtime);
        let ctx = InvocationContext {
            request_id,
            function_name: deployed.unit.name.clone(),
            tenant: req.tenant.clone(),
            remaining_time_ms: deployed.unit.config.timeout_ms,
            invoke_endpoint: endpoint,
            depth: req.depth,
        };

        let start = Instant::now();
        let result = if req.depth >= self.max_depth {
            InvocationResult::function_error(
                format!("recursion depth limit of {} exceeded", self.max_depth),
                0.0,
            )
        } else if kind == RuntimeKind::Native {
            match self.me.upgrade() {
                Some(me) => execute_native(&deployed, req.event, &ctx, self.config.isolation, me),
                None => InvocationResult::function_error("executor unavailable: host shut down", 0.0),
            }
        } else {
            self.pool.execute(&deployed, req.event, &ctx, kind)
        };

        self.counters.executed.fetch_add(1, Ordering::Relaxed);
        if !result.is_ok() {
            self.counters.failed.fetch_add(1, Ordering::Relaxed);
        }
        if let Some(l) = &self.logger {
            let executor = ExecutorConfig { kind, ..self.config }.label();
            l.log(InvocationRecord::now(
                &ctx.request_id,
                &ctx.tenant,
                &ctx.function_name,
                &executor,
                result.duration_ms,
                result.status,
            ));
        }
        self.debug.emit_with("execute", || {
            format!(
                "{} {} {} in {:.3} ms (wall {:.3} ms)",
                ctx.function_name,
                kind.as_str(),
                result.status,
                result.duration_ms,
                start.elapsed().as_secs_f64() * 1000.0
            )
        });
        self.debug.emit_with("respond", || match &result.value {
            Some(v) => format!("id={} {}", ctx.request_id, v),
            None => format!("id={} {}: {}", ctx.request_id, result.status, result.message()),
        });
        Ok(result)
    }

    fn invoke_remote(&self, endpoint: &str, ctx: &InvocationContext, target: &str, event: &Value, depth: u32) -> InvocationResult {
        let start = Instant::now();
        let ms = || start.elapsed().as_secs_f64() * 1000.0;
        let url = format!(
            "{}/2015-03-31/functions/{}/invocations",
            endpoint.trim_end_matches('/'),
            percent_encoding::utf8_percent_encode(target, percent_encoding::NON_ALPHANUMERIC)
        );
        let body = match serde_json::to_vec(event) {
            Ok(b) => b,
            Err(e) => return InvocationResult::function_error(e.to_string(), 0.0),
        };
        let headers = [
            ("Content-Type".to_string(), "application/json".to_string()),
            (DEPTH_HEADER.to_string(), depth.to_string()),
        ];
        self.debug
            .emit_with("dispatch", || format!("{} -> {url} depth={depth}", ctx.request_id));
        let resp = match self.client.request("POST", &url, &headers, &body, &self.client_auth) {
            Ok(r) => r,
            Err(e) => {
                return InvocationResult::function_error(format!("endpoint unreachable: {endpoint}: {e}"), ms())
            }
        };
        let value: Option<Value> = serde_json::from_slice(&resp.body).ok();
        let message = || {
            value
                .as_ref()
                .and_then(|v| v.get("errorMessage").or_else(|| v.get("message")))
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| String::from_utf8_lossy(&resp.body).into_owned())
        };
        if resp.status != 200 {
            return InvocationResult::function_error(
                format!("invoke of {target} via {endpoint} failed with {}: {}", resp.status, message()),
                ms(),
            );
        }
        if resp.header(FUNCTION_ERROR_HEADER).is_some() {
            let m = message();
            if value.as_ref().and_then(|v| v.get("errorType")).and_then(Value::as_str) == Some("Timeout") {
                let mut r = InvocationResult::function_error(m, ms());
                r.status = crate::InvocationStatus::Timeout;
                return r;
            }
            return InvocationResult::function_error(m, ms());
        }
        match value {
            Some(v) => InvocationResult::ok(v, ms()),
            None => InvocationResult::function_error(format!("invalid JSON response from {endpoint}"), ms()),
        }
    }
}

impl Dispatcher for Host {
    fn dispatch(&self, ctx: &InvocationContext, target: &str, event: Value) -> InvocationResult {
        let depth = ctx.depth + 1;
        if depth >= self.max_depth {
            return InvocationResult::function_error(
                format!("recursion depth limit of {} exceeded", self.max_depth),
                0.0,
            );
        }
        if !ctx.is_local() {
            return self.invoke_remote(&ctx.invoke_endpoint, ctx, target, &event, depth);
        }
        let req = InvokeRequest {
            tenant: ctx.tenant.clone(),
            function: target.to_string(),
            event,
            depth,
            invoke_endpoint: Some(LOCAL_ENDPOINT.to_string()),
            request_id: None,
        };
        stacker::maybe_grow(STACK_RED_ZONE, STACK_GROWTH, || match self.invoke(req) {
            Ok(r) => r,
            Err(e) => InvocationResult::function_error(e.to_string(), 0.0),
        })
    }
}

impl CallbackHandler for Host {
    fn invoke(&self, parent: &InvocationContext, function: &str, event: Value) -> InvocationResult {
        self.dispatch(parent, function, event)
    }
}

struct WeakCallback(Weak<Host>);

impl CallbackHandler for WeakCallback {
    fn invoke(&self, parent: &InvocationContext, function: &str, event: Value) -> InvocationResult {
        match self.0.upgrade() {
            Some(h) => h.dispatch(parent, function, event),
            None => InvocationResult::function_error("host shut down", 0.0),
        }
    }
}
