//! Functions compiled into the host. A native source file is a manifest
//! that exports some of them:
//!
//! ```text
//! # fib.fn
//! export fib
//! export fib_delay
//! ```

use std::hint::black_box;
use std::sync::atomic::Ordering;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Dispatcher, InvocationContext, ModuleState};

/// Arguments of a native call.
pub struct NativeCall<'a> {
    pub event: &'a Value,
    pub ctx: &'a InvocationContext,
    pub state: &'a ModuleState,
    pub dispatcher: &'a dyn Dispatcher,
}

pub type NativeFn = fn(&NativeCall<'_>) -> Result<Value, String>;

#[derive(Debug)]
pub struct Builtin {
    pub name: &'static str,
    /// Parameter names as a function signature would list them. `event` and
    /// `context` are always preset; the others are read from the event.
    pub params: &'static [&'static str],
    pub func: NativeFn,
}

static BUILTINS: &[Builtin] = &[
    Builtin {
        name: "helloworld",
        params: &[],
        func: helloworld,
    },
    Builtin {
        name: "fib",
        params: &["n", "context"],
        func: fib,
    },
    Builtin {
        name: "fib_delay",
        params: &["n", "context"],
        func: fib_delay,
    },
    Builtin {
        name: "counter",
        params: &["event", "context"],
        func: counter,
    },
    Builtin {
        name: "sleep",
        params: &["event", "context"],
        func: sleep,
    },
    Builtin {
        name: "echo",
        params: &["event", "context"],
        func: echo,
    },
    Builtin {
        name: "fail",
        params: &["event", "context"],
        func: fail,
    },
];

pub fn builtins() -> &'static [Builtin] {
    BUILTINS
}

pub fn builtin(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

/// Names exported by a manifest, in order of appearance.
pub fn parse_manifest(code: &[u8]) -> Result<Vec<String>, String> {
    let text = std::str::from_utf8(code).map_err(|_| "source is not UTF-8".to_string())?;
    let mut exports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_whitespace().collect::<Vec<_>>()[..] {
            ["export", name] => {
                if !exports.iter().any(|e| e == name) {
                    exports.push(name.to_string());
                }
            }
            _ => return Err(format!("line {}: expected `export <name>`", i + 1)),
        }
    }
    Ok(exports)
}

fn helloworld(_: &NativeCall<'_>) -> Result<Value, String> {
    Ok(json!("Hello, World!"))
}

fn arg_n(event: &Value) -> Result<u64, String> {
    match event.get("n").and_then(Value::as_i64) {
        Some(n) if n >= 1 => Ok(n as u64),
        Some(n) => Err(format!("fib requires n >= 1, got {n}")),
        None => Err("fib requires an integer argument n".into()),
    }
}

fn fib_with(call: &NativeCall<'_>, load: fn(u64)) -> Result<Value, String> {
    let n = arg_n(call.event)?;
    let c = call.state.counter.fetch_add(1, Ordering::SeqCst) + 1;
    load(c);
    if n <= 2 {
        return Ok(json!(1));
    }
    let me = call.ctx.function_name.as_str();
    let mut sum = 0u64;
    for k in [n - 1, n - 2] {
        let v = call
            .dispatcher
            .dispatch(call.ctx, me, json!({ "n": k }))
            .into_result()?;
        sum += v
            .as_u64()
            .ok_or_else(|| format!("fib({k}) returned a non-integer: {v}"))?;
    }
    Ok(json!(sum))
}

fn sine_load(c: u64) {
    let c = c as f64;
    black_box(c * c.sin());
}

fn delay_load(_: u64) {
    std::thread::sleep(Duration::from_millis(100));
}

fn fib(call: &NativeCall<'_>) -> Result<Value, String> {
    fib_with(call, sine_load)
}

fn fib_delay(call: &NativeCall<'_>) -> Result<Value, String> {
    fib_with(call, delay_load)
}

fn counter(call: &NativeCall<'_>) -> Result<Value, String> {
    Ok(json!(call.state.counter.fetch_add(1, Ordering::SeqCst) + 1))
}

fn sleep(call: &NativeCall<'_>) -> Result<Value, String> {
    let ms = call.event.get("ms").and_then(Value::as_u64).unwrap_or(100);
    std::thread::sleep(Duration::from_millis(ms));
    Ok(json!({ "slept_ms": ms }))
}

fn echo(call: &NativeCall<'_>) -> Result<Value, String> {
    Ok(call.event.clone())
}

fn fail(call: &NativeCall<'_>) -> Result<Value, String> {
    Err(call
        .event
        .get("message")
        .and_then(Value::as_str)
        .unwrap_or("intentional failure")
        .to_string())
}
