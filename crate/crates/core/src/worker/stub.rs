//! A worker that serves the built-in functions over the worker protocol.
//!
//! It behaves like a foreign-language worker would: it loads one source
//! file at start-up, answers requests concurrently, and routes calls to
//! other functions back to the host over its own standard streams.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use parking_lot::{Condvar, Mutex};
use serde_json::Value;

use super::protocol::{
    decode_host_message, encode_worker_message, CallbackRequest, EnumerateReply, HostMessage,
    WorkerMessage, WorkerRequest, WorkerResponse,
};
use crate::execution::{
    Dispatcher, InvocationContext, InvocationResult, ModuleState, NativeCall, NativeModule,
};
use crate::registry::FunctionSource;

struct Stub<W: Write> {
    module: Result<NativeModule, String>,
    state: ModuleState,
    out: Mutex<W>,
    callbacks: Mutex<Option<HashMap<String, mpsc::SyncSender<WorkerResponse>>>>,
    next_callback: AtomicU64,
    active: Mutex<usize>,
    idle: Condvar,
}

impl<W: Write> Stub<W> {
    fn write(&self, msg: &WorkerMessage) {
        let Ok(bytes) = encode_worker_message(msg) else {
            return;
        };
        let mut out = self.out.lock();
        let _ = out.write_all(&bytes).and_then(|_| out.flush());
    }

    fn handle(&self, req: WorkerRequest, me: &Arc<dyn Dispatcher>) -> WorkerResponse {
        let module = match &self.module {
            Ok(m) => m,
            Err(e) => return WorkerResponse::error(req.id, e.clone(), 0.0),
        };
        let function = req.handler.split_once('.').map(|(_, f)| f).unwrap_or("");
        let Some(b) = module.resolve(function) else {
            return WorkerResponse::error(req.id, format!("handler not found: {}", req.handler), 0.0);
        };
        // callbacks name the request they belong to by its protocol id
        let mut ctx = req.context.clone();
        ctx.request_id = req.id.clone();
        let call = NativeCall {
            event: &req.event,
            ctx: &ctx,
            state: &self.state,
            dispatcher: me.as_ref(),
        };
        let start = Instant::now();
        let r = (b.func)(&call);
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        match r {
            Ok(v) => WorkerResponse::ok(req.id, v, ms),
            Err(m) => WorkerResponse::error(req.id, m, ms),
        }
    }

    fn enumerate(&self, id: String) -> EnumerateReply {
        let functions = self.module.as_ref().map(|m| m.exports.clone()).unwrap_or_default();
        let params = functions
            .iter()
            .filter_map(|f| crate::execution::builtin(f))
            .map(|b| (b.name.to_string(), b.params.iter().map(|p| p.to_string()).collect()))
            .collect::<BTreeMap<_, _>>();
        EnumerateReply {
            id,
            functions,
            params,
        }
    }
}

struct StdioDispatcher<W: Write + Send + 'static> {
    stub: Arc<Stub<W>>,
}

impl<W: Write + Send + 'static> Dispatcher for StdioDispatcher<W> {
    fn dispatch(&self, ctx: &InvocationContext, target: &str, event: Value) -> InvocationResult {
        let id = format!("cb-{}", self.stub.next_callback.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = mpsc::sync_channel(1);
        {
            let mut cbs = self.stub.callbacks.lock();
            let Some(cbs) = cbs.as_mut() else {
                return InvocationResult::function_error("host closed the worker input", 0.0);
            };
            cbs.insert(id.clone(), tx);
        }
        self.stub.write(&WorkerMessage::Callback(CallbackRequest {
            id,
            parent: ctx.request_id.clone(),
            function: target.to_string(),
            event,
        }));
        match rx.recv() {
            Ok(resp) => resp.into_invocation_result(),
            Err(_) => InvocationResult::function_error("host closed the worker input", 0.0),
        }
    }
}

/// Serves requests from `input` until it ends, then waits for in-flight
/// requests and returns.
pub fn serve<R, W>(source: &Path, input: R, output: W)
where
    R: BufRead,
    W: Write + Send + 'static,
{
    let module = NativeModule::load(&FunctionSource::Path(source.to_path_buf()));
    let stub = Arc::new(Stub {
        module,
        state: ModuleState::default(),
        out: Mutex::new(output),
        callbacks: Mutex::new(Some(HashMap::new())),
        next_callback: AtomicU64::new(0),
        active: Mutex::new(0),
        idle: Condvar::new(),
    });
    let me: Arc<dyn Dispatcher> = Arc::new(StdioDispatcher { stub: stub.clone() });

    for line in input.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match decode_host_message(line.as_bytes()) {
            Ok(HostMessage::Request(req)) => {
                *stub.active.lock() += 1;
                let (s, d) = (stub.clone(), me.clone());
                std::thread::spawn(move || {
                    let resp = s.handle(req, &d);
                    s.write(&WorkerMessage::Response(resp));
                    let mut active = s.active.lock();
                    *active -= 1;
                    s.idle.notify_all();
                });
            }
            Ok(HostMessage::Enumerate { id }) => {
                stub.write(&WorkerMessage::Enumerated(stub.enumerate(id)));
            }
            Ok(HostMessage::CallbackReply(resp)) => {
                let tx = stub.callbacks.lock().as_mut().and_then(|m| m.remove(&resp.id));
                if let Some(tx) = tx {
                    let _ = tx.send(resp);
                }
            }
            Err(e) => {
                stub.write(&WorkerMessage::Response(WorkerResponse::error(
                    "unknown",
                    e.to_string(),
                    0.0,
                )));
            }
        }
    }

    // no further replies can arrive: release callers waiting on the host
    stub.callbacks.lock().take();
    let mut active = stub.active.lock();
    while *active > 0 {
        stub.idle.wait(&mut active);
    }
}
