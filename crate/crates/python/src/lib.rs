//! Python bindings: an in-process [`Host`], a control plane [`Instance`],
//! and the signing, scheduling and economics helpers.
//!
//! Events and results cross the boundary as JSON, so any value the `json`
//! module can encode is accepted.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;

use snafu_core::auth::sigv4::{self, Credentials, SigningParams};
use snafu_core::auth::{Account, AccountList, AuthMode, ClientAuth, SignableRequest};
use snafu_core::bench::econ::{economics_row, EconomicsInput};
use snafu_core::cli::extract;
use snafu_core::control::{InstanceConfig, FUNCTION_ERROR_HEADER};
use snafu_core::host::{HostOptions, InvokeRequest};
use snafu_core::http::HttpClient;
use snafu_core::registry::DEFAULT_TENANT;
use snafu_core::samples::sample_units_as;
use snafu_core::triggers::cron::CronSpec;
use snafu_core::worker::WorkerCommand;
use snafu_core::{ExecutorConfig, Registry, RuntimeKind};

create_exception!(snafu, SnafuError, PyException);
create_exception!(snafu, FunctionError, SnafuError);
create_exception!(snafu, AuthError, SnafuError);

fn to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn snafu_err(e: impl ToString) -> PyErr {
    SnafuError::new_err(e.to_string())
}

/// Functions executed inside this process.
#[pyclass(name = "Host", frozen)]
struct PyHost {
    inner: Arc<snafu_core::Host>,
}

#[pymethods]
impl PyHost {
    /// `executor` is `native`, `native-isolated`, `external-shared` or
    /// `external-nonshared`. `sources` are files or directories to load;
    /// `samples` adds the bundled sample functions.
    #[new]
    #[pyo3(signature = (executor = "native", sources = Vec::new(), samples = true, worker = None))]
    fn new(executor: &str, sources: Vec<PathBuf>, samples: bool, worker: Option<PathBuf>) -> PyResult<Self> {
        let config = ExecutorConfig::from_flag(executor).map_err(PyValueError::new_err)?;
        let kind = config.kind;
        let mut options = HostOptions::new(config);
        options.worker = worker.map(WorkerCommand::new).or_else(WorkerCommand::discover);
        let host = snafu_core::Host::new(Arc::new(Registry::new()), options);
        if samples {
            let runtime = if kind.is_external() { kind } else { RuntimeKind::Native };
            for unit in sample_units_as(runtime) {
                host.registry().register(unit).map_err(snafu_err)?;
            }
        }
        for x in extract(&sources, &host).map_err(snafu_err)? {
            host.registry().register(x.unit).map_err(snafu_err)?;
        }
        Ok(Self { inner: host })
    }

    /// Runs `function` and returns its value; raises `FunctionError` when
    /// the function fails.
    #[pyo3(signature = (function, event = None))]
    fn invoke<'py>(&self, py: Python<'py>, function: &str, event: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let event = match event {
            Some(e) => to_json(py, e)?,
            None => Value::Object(Default::default()),
        };
        let host = self.inner.clone();
        let req = InvokeRequest::new(function, event);
        let result = py.detach(move || host.invoke(req)).map_err(snafu_err)?;
        if !result.is_ok() {
            return Err(FunctionError::new_err(format!("{}: {}", result.status.as_str(), result.message())));
        }
        from_json(py, result.value.as_ref().unwrap_or(&Value::Null))
    }

    /// Names of the deployed functions.
    fn functions(&self) -> Vec<String> {
        self.inner.registry().list(DEFAULT_TENANT)
    }

    /// `{"executed": n, "forwarded": n, "failed": n}`
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("executed", s.executed)?;
        d.set_item("forwarded", s.forwarded)?;
        d.set_item("failed", s.failed)?;
        Ok(d)
    }

    /// Executor label such as `IP` or `IIP+L`.
    #[getter]
    fn executor(&self) -> String {
        self.inner.config().label()
    }
}

/// A control plane serving the Lambda invocation API on localhost.
#[pyclass(name = "Instance", frozen)]
struct PyInstance {
    // the instance holds a file watcher that is Send but not Sync
    inner: Mutex<Option<snafu_core::control::Instance>>,
    url: String,
    auth: ClientAuth,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (
        executor = "native",
        port = 0,
        functions_dir = None,
        samples = true,
        log_file = None,
        debug = false,
        auth = "none",
        accounts_file = None,
        worker = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        executor: &str,
        port: u16,
        functions_dir: Option<PathBuf>,
        samples: bool,
        log_file: Option<PathBuf>,
        debug: bool,
        auth: &str,
        accounts_file: Option<PathBuf>,
        worker: Option<PathBuf>,
    ) -> PyResult<Self> {
        let auth_mode: AuthMode = auth.parse().map_err(PyValueError::new_err)?;
        let accounts = match &accounts_file {
            Some(p) => AccountList::load(p).map_err(snafu_err)?,
            None => AccountList::default(),
        };
        let cfg = InstanceConfig {
            port,
            executor: executor.into(),
            functions_dir,
            samples,
            log_file,
            debug,
            auth_mode,
            accounts_file,
            worker,
            ..Default::default()
        };
        let inner = snafu_core::control::Instance::start(cfg).map_err(snafu_err)?;
        Ok(Self {
            url: inner.url(),
            inner: Mutex::new(Some(inner)),
            auth: ClientAuth::for_mode(auth_mode, &accounts),
        })
    }

    #[getter]
    fn url(&self) -> PyResult<String> {
        self.live()?;
        Ok(self.url.clone())
    }

    /// Invokes `function` over HTTP, signing the request as the instance's
    /// authenticator expects.
    #[pyo3(signature = (function, event = None))]
    fn invoke<'py>(&self, py: Python<'py>, function: &str, event: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let body = match event {
            Some(e) => to_json(py, e)?.to_string(),
            None => "{}".to_string(),
        };
        self.live()?;
        let url = format!("{}/2015-03-31/functions/{function}/invocations", self.url);
        let auth = self.auth.clone();
        let resp = py
            .detach(move || HttpClient::new().request("POST", &url, &[], body.as_bytes(), &auth))
            .map_err(snafu_err)?;
        let text = String::from_utf8_lossy(&resp.body).into_owned();
        if resp.status == 403 || resp.status == 401 {
            return Err(AuthError::new_err(text));
        }
        if resp.status != 200 {
            return Err(SnafuError::new_err(format!("HTTP {}: {text}", resp.status)));
        }
        if resp.header(FUNCTION_ERROR_HEADER).is_some() {
            return Err(FunctionError::new_err(text));
        }
        py.import("json")?.call_method1("loads", (text,))
    }

    /// Stops the server. Further calls raise.
    fn stop(&self) {
        let instance = self.inner.lock().expect("instance lock").take();
        drop(instance);
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    fn __exit__(&self, _t: Option<&Bound<'_, PyAny>>, _v: Option<&Bound<'_, PyAny>>, _tb: Option<&Bound<'_, PyAny>>) {
        self.stop();
    }
}

impl PyInstance {
    fn live(&self) -> PyResult<()> {
        match self.inner.lock().expect("instance lock").is_some() {
            true => Ok(()),
            false => Err(SnafuError::new_err("instance stopped")),
        }
    }
}

/// Calls made by the recursive fib(n), the request itself included.
#[pyfunction]
fn fib_call_count(n: u64) -> PyResult<u64> {
    snafu_core::execution::fib_call_count(n).map_err(PyValueError::new_err)
}

fn utc(secs: i64) -> PyResult<DateTime<Utc>> {
    DateTime::from_timestamp(secs, 0).ok_or_else(|| PyValueError::new_err("timestamp out of range"))
}

/// First time strictly after `after` (Unix seconds) matching the
/// five-field cron `spec`, or None when nothing matches.
#[pyfunction]
fn cron_next(spec: &str, after: i64) -> PyResult<Option<i64>> {
    let spec = CronSpec::parse(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(spec.next_after(utc(after)?).ok().map(|t| t.timestamp()))
}

/// Headers to add so the request carries an AWS Signature Version 4.
#[pyfunction]
#[pyo3(signature = (method, target, headers, body, access_key_id, secret_access_key, region, service = "lambda", time = None))]
#[allow(clippy::too_many_arguments)]
fn sign_request(
    method: &str,
    target: &str,
    headers: Vec<(String, String)>,
    body: &[u8],
    access_key_id: &str,
    secret_access_key: &str,
    region: &str,
    service: &str,
    time: Option<i64>,
) -> PyResult<Vec<(String, String)>> {
    let creds = Credentials {
        access_key_id: access_key_id.into(),
        secret_access_key: secret_access_key.into(),
    };
    let mut params = SigningParams::new(&creds, region, service);
    if let Some(t) = time {
        params.time = utc(t)?;
    }
    let req = SignableRequest {
        method,
        target,
        headers: &headers,
        body,
    };
    sigv4::sign(&req, &params)
        .map(|o| o.headers)
        .map_err(|e| AuthError::new_err(e.to_string()))
}

/// Checks a signed request against `accounts`, given as
/// `(access_key_id, secret_access_key, tenant)` triples, and returns the
/// tenant. Raises `AuthError` on any mismatch.
#[pyfunction]
#[pyo3(signature = (method, target, headers, body, accounts, now = None, skew_secs = 300))]
fn verify_request(
    method: &str,
    target: &str,
    headers: Vec<(String, String)>,
    body: &[u8],
    accounts: Vec<(String, String, String)>,
    now: Option<i64>,
    skew_secs: i64,
) -> PyResult<String> {
    let list = AccountList::new(
        accounts
            .into_iter()
            .map(|(access_key_id, secret_access_key, tenant)| Account {
                access_key_id,
                secret_access_key,
                tenant,
            })
            .collect(),
    )
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let now = match now {
        Some(t) => utc(t)?,
        None => Utc::now(),
    };
    let req = SignableRequest {
        method,
        target,
        headers: &headers,
        body,
    };
    sigv4::verify_request(&req, &list, chrono::Duration::seconds(skew_secs), now)
        .map_err(|e| AuthError::new_err(e.to_string()))
}

/// Monthly calls, price and utility for one configuration. Give either
/// `pph` (price per hour) or `ppmc` (price per million calls).
#[pyfunction]
#[pyo3(signature = (label, cps, pph = None, ppmc = None, free_tier_calls = None))]
fn economics<'py>(
    py: Python<'py>,
    label: &str,
    cps: f64,
    pph: Option<f64>,
    ppmc: Option<f64>,
    free_tier_calls: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let row = economics_row(&EconomicsInput {
        label: label.into(),
        cps,
        pph,
        ppmc,
        free_tier_calls,
    })
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("label", row.label)?;
    d.set_item("cps", row.cps)?;
    d.set_item("cpm", row.cpm)?;
    d.set_item("pricing", row.pricing)?;
    d.set_item("ppm", row.ppm)?;
    d.set_item("utility", row.utility)?;
    Ok(d)
}

#[pymodule]
pub fn snafu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyHost>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(fib_call_count, m)?)?;
    m.add_function(wrap_pyfunction!(cron_next, m)?)?;
    m.add_function(wrap_pyfunction!(sign_request, m)?)?;
    m.add_function(wrap_pyfunction!(verify_request, m)?)?;
    m.add_function(wrap_pyfunction!(economics, m)?)?;
    m.add("SnafuError", py.get_type::<SnafuError>())?;
    m.add("FunctionError", py.get_type::<FunctionError>())?;
    m.add("AuthError", py.get_type::<AuthError>())?;
    Ok(())
}
