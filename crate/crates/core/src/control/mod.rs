//! The Lambda-compatible control plane.
//!
//! Endpoints:
//!
//! | method | path                                     |                  |
//! |--------|------------------------------------------|------------------|
//! | POST   | `/2015-03-31/functions/{name}/invocations` | invoke         |
//! | POST   | `/invoke/{name}`                          | invoke (web)     |
//! | GET    | `/2015-03-31/functions/`                  | list             |
//! | GET    | `/2015-03-31/functions/{name}`            | get              |
//! | POST   | `/2015-03-31/functions`                   | create           |
//! | DELETE | `/2015-03-31/functions/{name}`            | delete           |
//! | GET    | `/_snafu/stats`                           | host counters    |

mod forward;
mod tenant;

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::auth::{AccountList, AccountStore, AuthMode, Authenticator, ClientAuth};
use crate::execution::{ExecutorConfig, InvocationResult, InvocationStatus, LOCAL_ENDPOINT};
use crate::host::{Host, HostOptions, InvokeRequest};
use crate::http::{Handler, ReaperConfig, Request, Response, Server, ServerConfig};
use crate::observability::debug::DebugOutput;
use crate::observability::log::CsvLogger;
use crate::registry::hotdeploy::{watch_hot_deploy, HotDeployHandle, RegistryEvent};
use crate::registry::loader::{load_functions_dir, ConfigFile};
use crate::registry::{FunctionSource, Registry, DEFAULT_TENANT};
use crate::triggers::{self, TriggerHandle};
use crate::worker::WorkerCommand;
use crate::{Error, Result};

pub use forward::forward_request;
pub use tenant::{control_program, TenantSpawner};

pub const DEFAULT_PORT: u16 = 10000;
pub const DEPTH_HEADER: &str = "X-Snafu-Depth";
pub const CALLBACK_HEADER: &str = "X-Snafu-Callback";
pub const FUNCTION_ERROR_HEADER: &str = "X-Amz-Function-Error";
pub const REQUEST_ID_HEADER: &str = "X-Amz-Request-Id";
pub const INVOCATION_TYPE_HEADER: &str = "X-Amz-Invocation-Type";
pub const DEFAULT_FUNCTIONS_DIR: &str = "functions";
pub const DEFAULT_LOG_FILE: &str = "snafu.csv";

/// Everything a control-plane instance is started with.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceConfig {
    pub bind: String,
    pub port: u16,
    /// `native`, `native-isolated`, `external-shared` or `external-nonshared`.
    pub executor: String,
    pub auth_mode: AuthMode,
    pub accounts_file: Option<PathBuf>,
    pub debug: bool,
    /// CSV log file when logging is on.
    pub log_file: Option<PathBuf>,
    pub forward_target: Option<String>,
    /// `local`, `self` or a URL.
    pub callback_endpoint: Option<String>,
    pub per_tenant_spawn: bool,
    pub reaper: Option<ReaperConfig>,
    /// `None` means the default directory, which may be absent.
    pub functions_dir: Option<PathBuf>,
    pub samples: bool,
    pub hot_deploy: bool,
    pub worker: Option<PathBuf>,
    /// Tenant requests are attributed to when no authenticator is active.
    pub tenant: String,
    /// Exit when standard input closes; set for spawned tenant instances.
    pub parent_watch: bool,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            executor: "native".into(),
            auth_mode: AuthMode::None,
            accounts_file: None,
            debug: false,
            log_file: None,
            forward_target: None,
            callback_endpoint: None,
            per_tenant_spawn: false,
            reaper: None,
            functions_dir: None,
            samples: false,
            hot_deploy: true,
            worker: None,
            tenant: DEFAULT_TENANT.into(),
            parent_watch: false,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.forward_target.is_some() && self.per_tenant_spawn {
            return Err(Error::Config(
                "--forward and --per-tenant-spawn are mutually exclusive".into(),
            ));
        }
        ExecutorConfig::from_flag(&self.executor).map_err(Error::Config)?;
        if let Some(t) = &self.forward_target {
            check_url(t)?;
        }
        match self.callback_endpoint.as_deref() {
            None | Some(LOCAL_ENDPOINT) | Some("self") => {}
            Some(u) => check_url(u)?,
        }
        Ok(())
    }

    /// The O/L/A/I vector this configuration runs with.
    pub fn executor_config(&self) -> Result<ExecutorConfig> {
        let mut cfg = ExecutorConfig::from_flag(&self.executor).map_err(Error::Config)?;
        cfg.debug_output = self.debug;
        cfg.logging = self.log_file.is_some();
        cfg.authentication = self.auth_mode != AuthMode::None;
        Ok(cfg)
    }

    /// Command-line flags reproducing this configuration.
    pub fn to_args(&self) -> Vec<String> {
        let mut a = vec![
            "--bind".to_string(),
            self.bind.clone(),
            "--port".into(),
            self.port.to_string(),
            "--executor".into(),
            self.executor.clone(),
            "--authenticator".into(),
            self.auth_mode.as_str().into(),
            "--tenant".into(),
            self.tenant.clone(),
        ];
        let mut opt = |flag: &str, v: Option<String>| {
            if let Some(v) = v {
                a.push(flag.into());
                a.push(v);
            }
        };
        opt("--accounts-file", self.accounts_file.as_ref().map(|p| p.display().to_string()));
        opt("--forward", self.forward_target.clone());
        opt("--callback", self.callback_endpoint.clone());
        opt("--functions-dir", self.functions_dir.as_ref().map(|p| p.display().to_string()));
        opt("--worker", self.worker.as_ref().map(|p| p.display().to_string()));
        if let Some(f) = &self.log_file {
            a.extend(["--logger".into(), "csv".into(), "--log-file".into(), f.display().to_string()]);
        }
        if let Some(r) = &self.reaper {
            a.push(format!(
                "--reaper={},{}",
                r.unread_timeout.as_millis(),
                r.idle_timeout.as_millis()
            ));
        }
        for (on, flag) in [
            (self.debug, "--debug"),
            (self.per_tenant_spawn, "--per-tenant-spawn"),
            (self.samples, "--samples"),
            (!self.hot_deploy, "--no-hot-deploy"),
            (self.parent_watch, "--parent-watch"),
        ] {
            if on {
                a.push(flag.into());
            }
        }
        a
    }
}

fn check_url(u: &str) -> Result<()> {
    match url::Url::parse(u) {
        Ok(p) if p.scheme() == "http" && p.host_str().is_some() => Ok(()),
        _ => Err(Error::Config(format!("not an http URL: {u}"))),
    }
}

enum Route {
    Local,
    Forward(String),
    PerTenant(TenantSpawner),
}

/// Request handling shared by every connection of an instance.
pub struct ControlPlane {
    host: Arc<Host>,
    auth: Authenticator,
    default_tenant: String,
    route: Route,
    /// Value of the callback header sent downstream when forwarding.
    downstream_callback: Option<String>,
    server_stats: OnceLock<Box<dyn Fn() -> Value + Send + Sync>>,
}

impl ControlPlane {
    pub fn host(&self) -> &Arc<Host> {
        &self.host
    }

    pub fn tenants(&self) -> Option<&TenantSpawner> {
        match &self.route {
            Route::PerTenant(t) => Some(t),
            _ => None,
        }
    }

    pub fn handle(&self, req: Request) -> Response {
        let path = req.path().to_string();
        if path == "/_snafu/stats" && req.method == "GET" {
            return self.stats();
        }
        let tenant = match self.auth.authenticate(&req.signable()) {
            Ok(_) if self.auth.mode == AuthMode::None => self.default_tenant.clone(),
            Ok(t) => t,
            Err(e) => {
                self.host.debug().emit_with("auth", || format!("{} {}: {e}", req.method, path));
                return Response::error(e.status(), e);
            }
        };

        if let Route::PerTenant(spawner) = &self.route {
            return self.relay_to_tenant(spawner, &tenant, &req);
        }

        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (req.method.as_str(), segments.as_slice()) {
            ("POST", ["2015-03-31", "functions", name, "invocations"]) | ("POST", ["invoke", name]) => {
                let name = function_name(name);
                self.invoke(&tenant, &name, &req)
            }
            ("GET", ["2015-03-31", "functions"]) | ("GET", ["2015-03-31", "functions", ""]) => {
                self.list(&tenant)
            }
            ("POST", ["2015-03-31", "functions"]) | ("POST", ["2015-03-31", "functions", ""]) => {
                self.create(&tenant, &req)
            }
            ("GET", ["2015-03-31", "functions", name]) => self.get(&tenant, &function_name(name)),
            ("DELETE", ["2015-03-31", "functions", name]) => self.delete(&tenant, &function_name(name)),
            (_, ["2015-03-31", "functions", ..]) | (_, ["invoke", _]) => {
                Response::error(405, format!("{} not allowed on {path}", req.method))
            }
            _ => Response::error(404, format!("no such endpoint: {path}")),
        }
    }

    fn invoke(&self, tenant: &str, name: &str, req: &Request) -> Response {
        match req.header(INVOCATION_TYPE_HEADER) {
            None | Some("RequestResponse") => {}
            Some(other) => {
                return Response::error(400, format!("invocation type {other} is not supported"))
            }
        }
        let event: Value = if req.body.iter().all(u8::is_ascii_whitespace) {
            json!({})
        } else {
            match serde_json::from_slice(&req.body) {
                Ok(v) => v,
                Err(e) => return Response::error(400, format!("request body is not JSON: {e}")),
            }
        };
        let depth = match req.header(DEPTH_HEADER).map(|d| d.trim().parse::<u32>()) {
            None => 0,
            Some(Ok(d)) => d,
            Some(Err(_)) => return Response::error(400, format!("invalid {DEPTH_HEADER}")),
        };

        if let Route::Forward(target) = &self.route {
            return self.relay(target, tenant, name, req);
        }

        let invoke_endpoint = req.header(CALLBACK_HEADER).map(str::to_string);
        if let Some(e) = invoke_endpoint.as_deref() {
            if e != LOCAL_ENDPOINT && check_url(e).is_err() {
                return Response::error(400, format!("invalid {CALLBACK_HEADER}"));
            }
        }
        let result = self.host.invoke(InvokeRequest {
            tenant: tenant.to_string(),
            function: name.to_string(),
            event,
            depth,
            invoke_endpoint,
            request_id: None,
        });
        match result {
            Ok(r) => result_response(r),
            Err(Error::NotFound { .. }) => Response::json(
                404,
                &json!({
                    "Type": "User",
                    "message": format!("Function not found: {name}"),
                }),
            ),
            Err(e) => Response::error(500, e),
        }
    }

    fn relay(&self, target: &str, tenant: &str, name: &str, req: &Request) -> Response {
        let start = Instant::now();
        let request_id = crate::execution::new_request_id();
        let mut extra = Vec::new();
        if let Some(cb) = &self.downstream_callback {
            extra.push((CALLBACK_HEADER.to_string(), cb.clone()));
        }
        let resp = forward_request(self.host.client(), target, req, &extra);
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        match resp {
            Ok(r) => {
                let status = if r.status != 200 {
                    InvocationStatus::FunctionError
                } else if r.header(FUNCTION_ERROR_HEADER).is_some() {
                    let timed_out = serde_json::from_slice::<Value>(&r.body)
                        .ok()
                        .and_then(|v| v.get("errorType").and_then(Value::as_str).map(|t| t == "Timeout"))
                        .unwrap_or(false);
                    if timed_out {
                        InvocationStatus::Timeout
                    } else {
                        InvocationStatus::FunctionError
                    }
                } else {
                    InvocationStatus::Ok
                };
                let rid = r.header(REQUEST_ID_HEADER).unwrap_or(&request_id).to_string();
                self.host.record_forward(&rid, tenant, name, ms, status);
                forward::relay_response(r)
            }
            Err(e) => {
                self.host
                    .record_forward(&request_id, tenant, name, ms, InvocationStatus::FunctionError);
                Response::error(502, format!("forward target {target} unreachable: {e}"))
            }
        }
    }

    fn relay_to_tenant(&self, spawner: &TenantSpawner, tenant: &str, req: &Request) -> Response {
        let start = Instant::now();
        let url = match spawner.url_for(tenant, &self.host) {
            Ok(u) => u,
            Err(e) => return Response::error(503, format!("no instance for tenant {tenant}: {e}")),
        };
        let resp = match forward_request(self.host.client(), &url, req, &[]) {
            Ok(r) => r,
            Err(_) if !spawner.is_running(tenant) => {
                // the child died under us: start a new one and retry once
                match spawner.url_for(tenant, &self.host) {
                    Ok(url) => match forward_request(self.host.client(), &url, req, &[]) {
                        Ok(r) => r,
                        Err(e) => return Response::error(502, e),
                    },
                    Err(e) => return Response::error(503, e),
                }
            }
            Err(e) => return Response::error(502, e),
        };
        if req.path().ends_with("/invocations") || req.path().starts_with("/invoke/") {
            let name = req.path().trim_end_matches("/invocations").rsplit('/').next().unwrap_or("");
            let status = if resp.status == 200 && resp.header(FUNCTION_ERROR_HEADER).is_none() {
                InvocationStatus::Ok
            } else {
                InvocationStatus::FunctionError
            };
            let rid = resp.header(REQUEST_ID_HEADER).unwrap_or("").to_string();
            self.host.record_forward(
                &rid,
                tenant,
                &function_name(name),
                start.elapsed().as_secs_f64() * 1000.0,
                status,
            );
        }
        forward::relay_response(resp)
    }

    fn list(&self, tenant: &str) -> Response {
        let registry = self.host.registry();
        let mut names = registry.list(tenant);
        if tenant != DEFAULT_TENANT {
            names.extend(registry.list(DEFAULT_TENANT));
            names.sort();
            names.dedup();
        }
        let functions: Vec<Value> = names
            .iter()
            .filter_map(|n| registry.resolve(tenant, n))
            .map(|d| function_json(&d.unit, d.version))
            .collect();
        Response::json(200, &json!({ "Functions": functions }))
    }

    fn get(&self, tenant: &str, name: &str) -> Response {
        match self.host.registry().resolve(tenant, name) {
            Some(d) => Response::json(200, &json!({ "Configuration": function_json(&d.unit, d.version) })),
            None => Response::error(404, format!("Function not found: {name}")),
        }
    }

    fn create(&self, tenant: &str, req: &Request) -> Response {
        let body: CreateBody = match serde_json::from_slice(&req.body) {
            Ok(b) => b,
            Err(e) => return Response::error(400, format!("invalid create request: {e}")),
        };
        let code = match body.code.decode() {
            Ok(c) => c,
            Err(e) => return Response::error(400, e),
        };
        let file_name = body.code_file_name.clone().unwrap_or_else(|| {
            let stem = body.config.handler.split('.').next().unwrap_or("source");
            format!("{stem}.fn")
        });
        let unit = match body
            .config
            .into_unit(FunctionSource::Inline { file_name, code })
            .map(|u| u.with_tenant(tenant))
        {
            Ok(u) => u,
            Err(e) => return Response::error(400, e),
        };
        let registry = self.host.registry();
        if registry.contains(tenant, &unit.name) {
            return Response::error(409, format!("Function already exist: {}", unit.name));
        }
        let name = unit.name.clone();
        match registry.register(unit) {
            Ok(reg) => {
                let d = registry.lookup(tenant, &name).expect("just registered");
                self.host
                    .debug()
                    .emit_with("deploy", || format!("{tenant}/{name} version {}", reg.version));
                Response::json(201, &function_json(&d.unit, d.version))
            }
            Err(e) => Response::error(400, e),
        }
    }

    fn delete(&self, tenant: &str, name: &str) -> Response {
        match self.host.registry().remove(tenant, name) {
            Some(_) => Response::new(204),
            None => Response::error(404, format!("Function not found: {name}")),
        }
    }

    fn stats(&self) -> Response {
        let host = self.host.stats();
        let log = self.host.logger().map(|l| {
            l.flush();
            let s = l.stats();
            json!({ "written": s.written, "dropped": s.dropped, "failed": s.failed })
        });
        let conns = self.server_stats.get().map(|f| f()).unwrap_or(Value::Null);
        Response::json(
            200,
            &json!({
                "executed": host.executed,
                "forwarded": host.forwarded,
                "failed": host.failed,
                "functions": self.host.registry().len(),
                "worker_spawns": self.host.pool().spawn_count(),
                "executor": self.host.config().label(),
                "log": log,
                "connections": conns,
            }),
        )
    }
}

#[derive(Deserialize)]
struct CreateBody {
    #[serde(flatten)]
    config: ConfigFile,
    #[serde(rename = "Code")]
    code: Code,
    #[serde(rename = "CodeFileName", default)]
    code_file_name: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Code {
    /// Base64 source, or the source text itself.
    Text(String),
    /// `{"ZipFile": <base64>}` as sent by Lambda clients; the payload is
    /// taken as the source file, not unpacked.
    Object {
        #[serde(rename = "ZipFile")]
        zip_file: String,
    },
}

impl Code {
    fn decode(&self) -> std::result::Result<Vec<u8>, String> {
        let b64 = base64::engine::general_purpose::STANDARD;
        match self {
            Code::Text(t) => Ok(b64.decode(t.trim()).unwrap_or_else(|_| t.as_bytes().to_vec())),
            Code::Object { zip_file } => b64
                .decode(zip_file.trim())
                .map_err(|e| format!("Code.ZipFile is not base64: {e}")),
        }
    }
}

fn function_json(unit: &crate::FunctionUnit, version: u64) -> Value {
    json!({
        "FunctionName": unit.name,
        "Handler": unit.handler,
        "Runtime": unit.runtime.as_str(),
        "Timeout": unit.config.timeout_ms.div_ceil(1000),
        "Environment": { "Variables": unit.config.environment },
        "Version": version.to_string(),
    })
}

/// Accepts a plain name, a percent-encoded one, or a function ARN.
pub fn function_name(segment: &str) -> String {
    let decoded = percent_encoding::percent_decode_str(segment)
        .decode_utf8_lossy()
        .into_owned();
    match decoded.split_once(":function:") {
        Some((_, rest)) if decoded.starts_with("arn:") => {
            rest.split(':').next().unwrap_or(rest).to_string()
        }
        _ => decoded,
    }
}

/// The HTTP form of an invocation result.
pub fn result_response(r: InvocationResult) -> Response {
    match r.status {
        InvocationStatus::Ok => Response::json(200, &r.value.unwrap_or(Value::Null)),
        InvocationStatus::FunctionError | InvocationStatus::Timeout => {
            let error_type = if r.status == InvocationStatus::Timeout {
                "Timeout"
            } else {
                "Unhandled"
            };
            Response::json(
                200,
                &json!({ "errorMessage": r.error_message.unwrap_or_default(), "errorType": error_type }),
            )
            .with_header(FUNCTION_ERROR_HEADER, "Unhandled")
        }
    }
}

/// Dispatches to a control plane that is set once the server is bound.
struct LateHandler(OnceLock<Arc<ControlPlane>>);

impl Handler for LateHandler {
    fn handle(&self, req: Request) -> Response {
        match self.0.get() {
            Some(p) => {
                let mut resp = p.handle(req);
                if resp.header(REQUEST_ID_HEADER).is_none() {
                    resp.headers
                        .push((REQUEST_ID_HEADER.into(), crate::execution::new_request_id()));
                }
                resp
            }
            None => Response::error(503, "starting up"),
        }
    }
}

/// A running control-plane instance.
pub struct Instance {
    server: Server,
    plane: Arc<ControlPlane>,
    _hot_deploy: Option<HotDeployHandle>,
    _triggers: Option<TriggerHandle>,
    warnings: Vec<String>,
}

impl Instance {
    pub fn start(cfg: InstanceConfig) -> Result<Self> {
        Self::start_with(cfg, Arc::new(Registry::new()))
    }

    /// Starts an instance around an existing registry.
    pub fn start_with(cfg: InstanceConfig, registry: Arc<Registry>) -> Result<Self> {
        cfg.validate()?;
        let executor = cfg.executor_config()?;
        let debug = Arc::new(DebugOutput::stdout(cfg.debug));
        let logger = match &cfg.log_file {
            Some(p) => Some(Arc::new(CsvLogger::open(p)?)),
            None => None,
        };

        let (auth, accounts) = match cfg.auth_mode {
            AuthMode::None => (Authenticator::none(), Arc::new(AccountList::default())),
            mode => {
                let path = cfg
                    .accounts_file
                    .clone()
                    .or_else(|| std::env::var_os(crate::ENV_ACCOUNTS_FILE).map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from(crate::auth::DEFAULT_ACCOUNTS_FILE));
                let store = AccountStore::from_file(&path)?;
                let accounts = store.current();
                (Authenticator::new(mode, store), accounts)
            }
        };

        let mut warnings = Vec::new();
        let functions_dir = match &cfg.functions_dir {
            Some(d) => Some(d.clone()),
            None => {
                let d = PathBuf::from(DEFAULT_FUNCTIONS_DIR);
                d.is_dir().then_some(d)
            }
        };
        if let Some(dir) = &functions_dir {
            let report = load_functions_dir(dir)?;
            for unit in report.units {
                registry.register(unit.with_tenant(cfg.tenant.clone()))?;
            }
            warnings.extend(report.warnings);
        }
        if cfg.samples {
            for unit in crate::samples::sample_units() {
                if !registry.contains(DEFAULT_TENANT, &unit.name) {
                    registry.register(unit)?;
                }
            }
        }

        let late = Arc::new(LateHandler(OnceLock::new()));
        let server = Server::bind(
            (cfg.bind.as_str(), cfg.port),
            ServerConfig {
                reaper: cfg.reaper,
                max_body: Some(64 * 1024 * 1024),
            },
            late.clone(),
        )?;
        let self_url = server.url();

        let callback = match cfg.callback_endpoint.as_deref() {
            None | Some(LOCAL_ENDPOINT) => LOCAL_ENDPOINT.to_string(),
            Some("self") => self_url.clone(),
            Some(u) => u.to_string(),
        };
        let downstream_callback = cfg.callback_endpoint.as_ref().map(|_| callback.clone());
        let worker = cfg
            .worker
            .clone()
            .map(WorkerCommand::new)
            .or_else(WorkerCommand::discover);

        let host = Host::new(
            registry.clone(),
            HostOptions {
                executor,
                debug: debug.clone(),
                logger,
                worker,
                client_auth: ClientAuth::for_mode(cfg.auth_mode, &accounts),
                callback,
                ..Default::default()
            },
        );

        let route = if let Some(t) = &cfg.forward_target {
            Route::Forward(t.trim_end_matches('/').to_string())
        } else if cfg.per_tenant_spawn {
            Route::PerTenant(TenantSpawner::new(cfg.clone())?)
        } else {
            Route::Local
        };

        let plane = Arc::new(ControlPlane {
            host: host.clone(),
            auth,
            default_tenant: cfg.tenant.clone(),
            route,
            downstream_callback,
            server_stats: OnceLock::new(),
        });
        let conns = server.snapshot_fn();
        let _ = plane.server_stats.set(Box::new(move || {
            let s = conns();
            json!({
                "open": s.counts.open,
                "unread": s.counts.unread,
                "in_flight": s.counts.in_flight,
                "peak": s.peak,
                "reaped": s.reaped,
                "accepted": s.accepted,
            })
        }));
        let _ = late.0.set(plane.clone());

        let hot_deploy = match &functions_dir {
            Some(dir) if cfg.hot_deploy => {
                let d = debug.clone();
                Some(watch_hot_deploy(registry.clone(), dir, &cfg.tenant, move |ev| match ev {
                    RegistryEvent::Registered { name, version } => {
                        d.emit_with("deploy", || format!("{name} version {version}"))
                    }
                    RegistryEvent::Removed { name } => d.emit_with("undeploy", || name.clone()),
                    RegistryEvent::Warning(w) => tracing::warn!("{w}"),
                })?)
            }
            _ => None,
        };

        let triggers = match &functions_dir {
            Some(dir) => {
                let path = dir.join(triggers::TRIGGERS_FILE);
                if path.is_file() {
                    let spec = triggers::TriggerFile::load(&path)?;
                    Some(triggers::start(host.clone(), spec, dir)?)
                } else {
                    None
                }
            }
            None => None,
        };

        if cfg.parent_watch {
            let debug = debug.clone();
            std::thread::spawn(move || {
                let mut sink = Vec::new();
                let _ = std::io::Read::read_to_end(&mut std::io::stdin(), &mut sink);
                debug.flush();
                std::process::exit(0);
            });
        }

        Ok(Self {
            server,
            plane,
            _hot_deploy: hot_deploy,
            _triggers: triggers,
            warnings,
        })
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.server.local_addr()
    }

    pub fn host(&self) -> &Arc<Host> {
        self.plane.host()
    }

    pub fn plane(&self) -> &Arc<ControlPlane> {
        &self.plane
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    /// Problems found while loading the functions directory.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Blocks the calling thread for as long as the process runs.
    pub fn wait(&self) -> ! {
        loop {
            std::thread::park_timeout(Duration::from_secs(3600));
        }
    }
}

impl Drop for Instance {
    fn drop(&mut self) {
        if let Some(l) = self.host().logger() {
            let s = l.shutdown();
            if s.dropped > 0 || s.failed > 0 {
                tracing::warn!("log rows dropped: {}, failed: {}", s.dropped, s.failed);
            }
        }
    }
}

/// Parses the `--reaper` value: empty for defaults, or `UNREAD_MS,IDLE_MS`.
pub fn parse_reaper(v: &str) -> Result<ReaperConfig> {
    ReaperConfig::parse(v).map_err(Error::Config)
}

/// Reads the listening URL a started instance prints on its first line.
pub fn parse_listening_line(line: &str) -> Option<&str> {
    line.trim().strip_prefix("listening on ")
}

/// Default log file path used by `--logger csv` without `--log-file`.
pub fn default_log_file() -> &'static Path {
    Path::new(DEFAULT_LOG_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn function_names_from_paths() {
        assert_eq!(function_name("fib"), "fib");
        assert_eq!(function_name("my%20fn"), "my fn");
        assert_eq!(function_name("arn:aws:lambda:us-east-1:123:function:fib"), "fib");
        assert_eq!(function_name("arn%3Aaws%3Alambda%3Aeu%3A1%3Afunction%3Afib%3A%24LATEST"), "fib");
    }

    #[test]
    fn config_flags_round_trip_through_args() {
        let cfg = InstanceConfig {
            port: 0,
            executor: "native-isolated".into(),
            debug: true,
            log_file: Some("x.csv".into()),
            reaper: Some(ReaperConfig::parse("100,200").unwrap()),
            callback_endpoint: Some("self".into()),
            samples: true,
            hot_deploy: false,
            ..Default::default()
        };
        let args = cfg.to_args();
        assert!(args.contains(&"--reaper=100,200".to_string()));
        assert!(args.contains(&"--no-hot-deploy".to_string()));
        let ec = cfg.executor_config().unwrap();
        assert_eq!(ec.label(), "IIP+O+L");
    }

    #[test]
    fn forward_and_per_tenant_are_exclusive() {
        let cfg = InstanceConfig {
            forward_target: Some("http://127.0.0.1:1".into()),
            per_tenant_spawn: true,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = InstanceConfig {
            callback_endpoint: Some("ftp://x".into()),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn function_errors_follow_the_lambda_convention() {
        let r = result_response(InvocationResult::function_error("boom", 1.0));
        assert_eq!(r.status, 200);
        assert_eq!(r.header(FUNCTION_ERROR_HEADER), Some("Unhandled"));
        let v: Value = serde_json::from_slice(&r.body).unwrap();
        assert_eq!(v["errorMessage"], "boom");
        let r = result_response(InvocationResult::ok(json!(144), 1.0));
        assert_eq!(r.body, b"144");
    }
}
