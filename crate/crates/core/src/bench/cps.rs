use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{fib_value, BenchResult};
use crate::auth::{Account, AuthMode, ClientAuth, Credentials};
use crate::control::{parse_listening_line, InstanceConfig, FUNCTION_ERROR_HEADER};
use crate::execution::fib_call_count;
use crate::http::HttpClient;

const STARTUP_TIMEOUT: Duration = Duration::from_secs(20);
const BENCH_KEY_ID: &str = "AKIDBENCH";
const BENCH_SECRET: &str = "bench-secret-key";

/// A control-plane instance running as a child process. Killed on drop.
pub struct HostProcess {
    child: Child,
    url: String,
    _stdin: ChildStdin,
}

impl HostProcess {
    /// Starts `program` with the flags for `cfg` and waits until it listens.
    /// Anything the child prints afterwards is read and discarded.
    pub fn start(program: &Path, cfg: &InstanceConfig) -> Result<Self, String> {
        let mut child = Command::new(program)
            .args(cfg.to_args())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start {}: {e}", program.display()))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut tx = Some(tx);
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if let Some(url) = parse_listening_line(&line) {
                    if let Some(tx) = tx.take() {
                        let _ = tx.send(url.to_string());
                    }
                }
            }
        });
        match rx.recv_timeout(STARTUP_TIMEOUT) {
            Ok(url) => Ok(Self {
                child,
                url,
                _stdin: stdin,
            }),
            Err(_) => {
                let _ = child.kill();
                let status = child.wait().ok();
                Err(format!("{} did not start ({status:?})", program.display()))
            }
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }
}

impl Drop for HostProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A labelled host configuration to measure.
#[derive(Clone, Debug)]
pub struct BenchTarget {
    pub label: String,
    pub config: InstanceConfig,
}

impl BenchTarget {
    pub fn new(config: InstanceConfig) -> Self {
        let label = config
            .executor_config()
            .map(|c| c.label())
            .unwrap_or_else(|_| config.executor.clone());
        Self { label, config }
    }
}

fn bench_credentials() -> Credentials {
    Credentials {
        access_key_id: BENCH_KEY_ID.into(),
        secret_access_key: BENCH_SECRET.into(),
    }
}

/// Client credentials matching the accounts file the bench writes.
pub fn bench_client_auth(mode: AuthMode) -> ClientAuth {
    match mode {
        AuthMode::None => ClientAuth::None,
        AuthMode::Accounts => ClientAuth::SharedKey(BENCH_SECRET.into()),
        AuthMode::Aws4 => ClientAuth::Aws4 {
            credentials: bench_credentials(),
            region: "us-east-1".into(),
        },
    }
}

/// Invokes `function` with `event` and returns the decoded result.
pub fn invoke_http(
    client: &HttpClient,
    base_url: &str,
    function: &str,
    event: &Value,
    auth: &ClientAuth,
) -> Result<Value, String> {
    let url = format!("{}/2015-03-31/functions/{function}/invocations", base_url.trim_end_matches('/'));
    let headers = [("Content-Type".to_string(), "application/json".to_string())];
    let resp = client
        .request("POST", &url, &headers, event.to_string().as_bytes(), auth)
        .map_err(|e| format!("POST {url}: {e}"))?;
    if resp.status != 200 {
        return Err(format!("{function}: HTTP {}: {}", resp.status, String::from_utf8_lossy(&resp.body)));
    }
    if resp.header(FUNCTION_ERROR_HEADER).is_some() {
        return Err(format!("{function} failed: {}", String::from_utf8_lossy(&resp.body)));
    }
    resp.json().map_err(|e| format!("{function}: bad response body: {e}"))
}

pub fn host_stats(client: &HttpClient, base_url: &str) -> Result<Value, String> {
    let url = format!("{}/_snafu/stats", base_url.trim_end_matches('/'));
    let resp = client
        .request("GET", &url, &[], b"", &ClientAuth::None)
        .map_err(|e| format!("GET {url}: {e}"))?;
    resp.json().map_err(|e| format!("stats: {e}"))
}

/// The configuration one repetition runs with: a fresh port, state
/// directory, log file and accounts file, and recursive calls sent back
/// over HTTP.
fn repetition_config(base: &InstanceConfig, dir: &Path) -> Result<InstanceConfig, String> {
    let mut cfg = base.clone();
    cfg.port = 0;
    cfg.samples = true;
    cfg.hot_deploy = false;
    cfg.parent_watch = true;
    let functions = dir.join("functions");
    std::fs::create_dir_all(&functions).map_err(|e| e.to_string())?;
    cfg.functions_dir = Some(functions);
    if cfg.callback_endpoint.is_none() {
        cfg.callback_endpoint = Some("self".into());
    }
    if cfg.log_file.is_some() {
        cfg.log_file = Some(dir.join("snafu.csv"));
    }
    if cfg.auth_mode != AuthMode::None {
        let c = bench_credentials();
        let accounts = vec![Account {
            access_key_id: c.access_key_id,
            secret_access_key: c.secret_access_key,
            tenant: "default".into(),
        }];
        let path = dir.join("accounts.json");
        std::fs::write(&path, serde_json::to_vec(&accounts).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        cfg.accounts_file = Some(path);
    }
    Ok(cfg)
}

/// Shortest timed window of one repetition. A single fib(15) on a fast
/// configuration finishes in a few milliseconds, well inside scheduler
/// noise, so a repetition repeats it until this much time has passed.
pub const MIN_REPETITION: Duration = Duration::from_secs(1);

/// One repetition against a newly started host: one untimed fib(1) to
/// open the connection, then back-to-back fib(fib_n) calls for at least
/// [`MIN_REPETITION`]. Returns calls per second. A repetition whose
/// executed-call count differs from the oracle is an error.
pub fn measure_repetition(program: &Path, target: &BenchTarget, fib_n: u64, rep: usize) -> Result<f64, String> {
    let calls = fib_call_count(fib_n)?;
    let expected = fib_value(fib_n);
    let auth = bench_client_auth(target.config.auth_mode);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = repetition_config(&target.config, dir.path())?;
    let host = HostProcess::start(program, &cfg)?;
    let client = HttpClient::new();
    invoke_http(&client, host.url(), "fib", &json!({ "n": 1 }), &auth)?;

    let mut rounds = 0u64;
    let start = Instant::now();
    while rounds == 0 || start.elapsed() < MIN_REPETITION {
        let value = invoke_http(&client, host.url(), "fib", &json!({ "n": fib_n }), &auth)?;
        if value != json!(expected) {
            return Err(format!("{} rep {rep}: fib({fib_n}) returned {value}, expected {expected}", target.label));
        }
        rounds += 1;
    }
    let secs = start.elapsed().as_secs_f64();

    let stats = host_stats(&client, host.url())?;
    let want = 1 + rounds * calls;
    let executed = stats["executed"].as_u64().unwrap_or(0);
    if executed != want {
        return Err(format!(
            "{} rep {rep}: host executed {executed} calls, expected {want}; run invalid",
            target.label
        ));
    }
    if cfg.log_file.is_some() {
        let written = stats["log"]["written"].as_u64().unwrap_or(0);
        if written != want {
            return Err(format!(
                "{} rep {rep}: {written} log rows, expected {want}; run invalid",
                target.label
            ));
        }
    }
    Ok((rounds * calls) as f64 / secs)
}

/// `repetitions` runs of [`measure_repetition`] back to back.
pub fn measure_cps(program: &Path, target: &BenchTarget, fib_n: u64, repetitions: usize) -> Result<BenchResult, String> {
    let calls = fib_call_count(fib_n)?;
    let values = (0..repetitions)
        .map(|rep| measure_repetition(program, target, fib_n, rep))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchResult::new(&target.label, fib_n, calls, values))
}
