//! The `snafu` command: run one function from source files, or drop into
//! the interactive loop when no function is named.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use serde_json::{Map, Value};

use crate::execution::{builtin, parse_manifest};
use crate::host::{Host, HostOptions, InvokeRequest};
use crate::observability::DebugOutput;
use crate::registry::loader::{load_unit_dir, CONFIG_FILE};
use crate::registry::{FunctionSource, FunctionUnit, Registry, DEFAULT_TENANT};
use crate::triggers::{run_repl, ReplBackend};
use crate::worker::WorkerCommand;
use crate::{ExecutorConfig, InvocationResult, RuntimeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FUNCTION_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const ENUMERATE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Parser, Debug)]
#[command(name = "snafu", about = "Run functions from source files")]
pub struct CliArgs {
    /// Function to execute; without it an interactive prompt starts.
    #[arg(short = 'x', long = "execute", value_name = "NAME")]
    pub execute: Option<String>,

    /// Event passed to the function, as JSON.
    #[arg(long, value_name = "JSON")]
    pub event: Option<String>,

    /// native, native-isolated, external-shared or external-nonshared.
    #[arg(short = 'e', long, default_value = "native")]
    pub executor: String,

    /// Worker executable for external executors.
    #[arg(long, env = crate::ENV_WORKER)]
    pub worker: Option<PathBuf>,

    /// Print debug lines for each stage of an invocation.
    #[arg(long)]
    pub debug: bool,

    /// Source files, function directories or directories of either.
    #[arg(value_name = "SOURCES")]
    pub sources: Vec<PathBuf>,
}

/// A function extracted from a source, with its parameter names if known.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub unit: FunctionUnit,
    pub params: Vec<String>,
}

pub fn exit_code(r: &InvocationResult) -> i32 {
    if r.is_ok() {
        EXIT_OK
    } else {
        EXIT_FUNCTION_ERROR
    }
}

fn source_files(path: &Path) -> Result<Vec<PathBuf>, String> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(format!("{}: no such file or directory", path.display()));
    }
    if path.join(CONFIG_FILE).is_file() {
        let unit = load_unit_dir(path)?;
        return match unit.source {
            FunctionSource::Path(p) => Ok(vec![p]),
            FunctionSource::Inline { .. } => Ok(Vec::new()),
        };
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for p in entries {
        if p.is_dir() && p.join(CONFIG_FILE).is_file() {
            out.extend(source_files(&p)?);
        } else if p.is_file() && p.extension().is_some_and(|e| e == "fn") {
            out.push(p);
        }
    }
    Ok(out)
}

/// Every function defined in `sources`. Native sources are read as export
/// manifests; with an external executor the worker lists them.
pub fn extract(sources: &[PathBuf], host: &Host) -> Result<Vec<Extracted>, String> {
    let kind = host.config().kind;
    let mut out: Vec<Extracted> = Vec::new();
    for s in sources {
        for file in source_files(s)? {
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let (names, mut params) = if kind.is_external() {
                let reply = host.pool().enumerate(&file, ENUMERATE_TIMEOUT)?;
                (reply.functions, reply.params)
            } else {
                let code = std::fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?;
                let names = parse_manifest(&code).map_err(|e| format!("{}: {e}", file.display()))?;
                let params = names
                    .iter()
                    .filter_map(|n| builtin(n).map(|b| (n.clone(), b.params.iter().map(|p| p.to_string()).collect())))
                    .collect::<BTreeMap<_, _>>();
                (names, params)
            };
            let runtime = if kind.is_external() { kind } else { RuntimeKind::Native };
            for name in names {
                if out.iter().any(|e| e.unit.name == name) {
                    tracing::warn!("{name} defined more than once; keeping the first");
                    continue;
                }
                let unit = FunctionUnit::new(
                    name.clone(),
                    format!("{stem}.{name}"),
                    runtime,
                    FunctionSource::Path(file.clone()),
                );
                out.push(Extracted {
                    params: params.remove(&name).unwrap_or_default(),
                    unit,
                });
            }
        }
    }
    Ok(out)
}

/// Parses a prompted value: a JSON scalar, or the text itself as a string.
pub fn parse_prompted(text: &str) -> Value {
    let text = text.trim();
    match serde_json::from_str::<Value>(text) {
        Ok(v) if !v.is_object() && !v.is_array() => v,
        _ => Value::String(text.to_string()),
    }
}

/// Fills parameters missing from `event` by asking for them. `event` and
/// `context` are never asked for. Returns `None` when a value is needed
/// but cannot be read.
pub fn prompt_missing(
    params: &[String],
    event: Option<Value>,
    interactive: bool,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Option<Value> {
    let missing: Vec<&String> = params
        .iter()
        .filter(|p| p.as_str() != "event" && p.as_str() != "context")
        .filter(|p| event.as_ref().and_then(|e| e.get(p.as_str())).is_none())
        .collect();
    if missing.is_empty() {
        return Some(event.unwrap_or_else(|| Value::Object(Map::new())));
    }
    if !interactive {
        return None;
    }
    let mut map = match event {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return None,
    };
    for p in missing {
        let _ = write!(out, "{p} = ? ");
        let _ = out.flush();
        let mut line = String::new();
        match input.read_line(&mut line) {
            Ok(0) | Err(_) => return None,
            Ok(_) => {
                map.insert(p.clone(), parse_prompted(&line));
            }
        }
    }
    Some(Value::Object(map))
}

struct HostRepl(Arc<Host>);

impl ReplBackend for HostRepl {
    fn call(&self, function: &str, event: Value) -> Result<InvocationResult, String> {
        self.0
            .invoke(InvokeRequest::new(function, event))
            .map_err(|e| e.to_string())
    }

    fn list(&self) -> Vec<String> {
        self.0.registry().list(DEFAULT_TENANT)
    }
}

/// Runs the command with explicit streams. `interactive` says whether
/// `input` is a terminal a user can answer prompts on.
pub fn run(
    args: CliArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
    interactive: bool,
) -> i32 {
    let mut executor = match ExecutorConfig::from_flag(&args.executor) {
        Ok(e) => e,
        Err(e) => {
            let _ = writeln!(err, "snafu: {e}");
            return EXIT_USAGE;
        }
    };
    executor.debug_output = args.debug;
    if args.sources.is_empty() {
        let _ = writeln!(err, "snafu: no source files given");
        return EXIT_USAGE;
    }
    let event = match args.event.as_deref().map(serde_json::from_str::<Value>) {
        None => None,
        Some(Ok(v)) => Some(v),
        Some(Err(e)) => {
            let _ = writeln!(err, "snafu: --event is not valid JSON: {e}");
            return EXIT_USAGE;
        }
    };

    let mut options = HostOptions::new(executor);
    options.debug = Arc::new(DebugOutput::to_writer(args.debug, Box::new(std::io::stdout())));
    options.worker = args.worker.map(WorkerCommand::new).or_else(WorkerCommand::discover);
    let host = Host::new(Arc::new(Registry::new()), options);

    let extracted = match extract(&args.sources, &host) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "snafu: {e}");
            return EXIT_USAGE;
        }
    };
    for x in &extracted {
        if let Err(e) = host.registry().register(x.unit.clone()) {
            let _ = writeln!(err, "snafu: {e}");
            return EXIT_USAGE;
        }
    }

    let Some(target) = args.execute else {
        return run_repl(&HostRepl(host), input, out, interactive);
    };

    let Some(found) = extracted.iter().find(|x| x.unit.name == target) else {
        let mut names: Vec<&str> = extracted.iter().map(|x| x.unit.name.as_str()).collect();
        names.sort_unstable();
        let _ = writeln!(err, "snafu: no function {target:?}; candidates: {}", names.join(", "));
        return EXIT_USAGE;
    };
    let Some(event) = prompt_missing(&found.params, event, interactive, input, out) else {
        let _ = writeln!(err, "snafu: missing arguments for {target}");
        return EXIT_USAGE;
    };

    let result = match host.invoke(InvokeRequest::new(&target, event)) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "snafu: {e}");
            return EXIT_USAGE;
        }
    };
    drop(host);
    if result.is_ok() {
        let _ = writeln!(out, "{}", result.value.clone().unwrap_or(Value::Null));
    } else {
        let _ = writeln!(err, "{}: {}", result.status.as_str(), result.message());
    }
    exit_code(&result)
}
