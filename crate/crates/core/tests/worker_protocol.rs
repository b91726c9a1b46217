mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use snafu_core::execution::{ExecutorConfig, InvocationStatus, RuntimeKind};
use snafu_core::host::{HostOptions, InvokeRequest};
use snafu_core::samples::sample_units_as;
use snafu_core::worker::WorkerCommand;
use snafu_core::{Host, Registry};

fn host_with(executor: &str, worker: WorkerCommand, runtime: RuntimeKind) -> Arc<Host> {
    let registry = Arc::new(Registry::new());
    for u in sample_units_as(runtime) {
        registry.register(u).unwrap();
    }
    let mut opts = HostOptions::new(ExecutorConfig::from_flag(executor).unwrap());
    opts.worker = Some(worker);
    Host::new(registry, opts)
}

fn host(executor: &str) -> Arc<Host> {
    host_with(executor, WorkerCommand::new(common::worker_exe()), RuntimeKind::Native)
}

fn call(h: &Host, f: &str, ev: Value) -> snafu_core::InvocationResult {
    h.invoke(InvokeRequest::new(f, ev)).unwrap()
}

#[test]
fn fib_recurses_through_worker_callbacks() {
    let (value, calls) = common::fib_and_calls(12);
    for executor in ["external-shared", "external-nonshared"] {
        let h = host(executor);
        let r = call(&h, "fib", json!({"n": 12}));
        assert_eq!(r.value, Some(json!(value)), "{executor}: {r:?}");
        assert_eq!(h.stats().executed, calls, "{executor}");
        if executor == "external-shared" {
            assert_eq!(h.pool().spawn_count(), 1);
        } else {
            assert_eq!(h.pool().spawn_count(), calls);
        }
    }
}

#[test]
fn shared_worker_keeps_state_and_fresh_worker_does_not() {
    let h = host("external-shared");
    let got: Vec<Value> = (0..3).map(|_| call(&h, "counter", json!({})).value.unwrap()).collect();
    assert_eq!(got, [json!(1), json!(2), json!(3)]);

    let h = host("external-nonshared");
    let got: Vec<Value> = (0..3).map(|_| call(&h, "counter", json!({})).value.unwrap()).collect();
    assert_eq!(got, [json!(1), json!(1), json!(1)]);
}

#[test]
fn unit_runtime_selects_the_worker_under_a_native_host() {
    let h = host_with(
        "native",
        WorkerCommand::new(common::worker_exe()),
        RuntimeKind::ExternalShared,
    );
    assert_eq!(call(&h, "echo", json!({"a": [1, 2]})).value, Some(json!({"a": [1, 2]})));
    assert_eq!(h.pool().spawn_count(), 1);
}

#[test]
fn function_errors_come_back_as_errors() {
    let h = host("external-shared");
    let r = call(&h, "fail", json!({"message": "nope"}));
    assert_eq!(r.status, InvocationStatus::FunctionError);
    assert_eq!(r.message(), "nope");
    // the worker survives a function error
    assert_eq!(call(&h, "fail", json!({})).message(), "intentional failure");
    assert_eq!(h.pool().shared_worker("default", "fail").unwrap().spawn_count(), 1);
}

#[test]
fn timeout_retires_the_worker_and_the_next_call_respawns() {
    let registry = Arc::new(Registry::new());
    for mut u in sample_units_as(RuntimeKind::Native) {
        u.config.timeout_ms = 300;
        registry.register(u).unwrap();
    }
    let mut opts = HostOptions::new(ExecutorConfig::from_flag("external-shared").unwrap());
    opts.worker = Some(WorkerCommand::new(common::worker_exe()));
    let h = Host::new(registry, opts);

    let start = Instant::now();
    let r = call(&h, "sleep", json!({"ms": 5000}));
    assert_eq!(r.status, InvocationStatus::Timeout, "{r:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
    assert_eq!(call(&h, "echo", json!(7)).value, Some(json!(7)));
    assert_eq!(h.pool().spawn_count(), 2);
}

fn script(dir: &Path, name: &str, body: &str) -> WorkerCommand {
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    WorkerCommand::new(p)
}

#[test]
fn crashing_worker_is_a_function_error_not_a_hang() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("exits", "read line; exit 3"),
        ("garbage", "read line; echo 'this is not json'; sleep 5"),
    ] {
        for executor in ["external-shared", "external-nonshared"] {
            let h = host_with(executor, script(dir.path(), name, body), RuntimeKind::Native);
            let start = Instant::now();
            let r = call(&h, "echo", json!({}));
            assert_eq!(r.status, InvocationStatus::FunctionError, "{name}/{executor}: {r:?}");
            assert!(start.elapsed() < Duration::from_secs(4), "{name}/{executor} took {:?}", start.elapsed());
        }
    }
}

#[test]
fn missing_worker_is_executor_unavailable() {
    let h = host_with(
        "external-shared",
        WorkerCommand::new("/nonexistent/worker"),
        RuntimeKind::Native,
    );
    let r = call(&h, "echo", json!({}));
    assert!(r.message().starts_with("executor unavailable"), "{r:?}");
}

#[test]
fn enumerate_lists_exports_with_parameters() {
    let h = host("external-shared");
    let reply = h
        .pool()
        .enumerate(&common::samples_dir().join("fib/fib.fn"), Duration::from_secs(5))
        .unwrap();
    assert_eq!(reply.functions, ["fib", "fib_delay"]);
    assert_eq!(reply.params["fib"], ["n", "context"]);
}
