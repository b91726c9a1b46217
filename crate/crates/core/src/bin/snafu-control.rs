use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use snafu_core::auth::AuthMode;
use snafu_core::control::{default_log_file, parse_reaper, Instance, InstanceConfig, DEFAULT_PORT};
use snafu_core::http::ReaperConfig;

/// Lambda-compatible control plane for a function host.
#[derive(Parser, Debug)]
#[command(name = "snafu-control")]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,

    /// 0 picks a free port.
    #[arg(short, long, env = snafu_core::ENV_PORT, default_value_t = DEFAULT_PORT)]
    port: u16,

    /// native, native-isolated, external-shared or external-nonshared.
    #[arg(short, long, default_value = "native")]
    executor: String,

    /// none, accounts or aws4.
    #[arg(short, long, default_value = "none")]
    authenticator: AuthMode,

    #[arg(long, env = snafu_core::ENV_ACCOUNTS_FILE)]
    accounts_file: Option<PathBuf>,

    /// `csv` turns on invocation logging.
    #[arg(short, long, value_parser = ["csv", "none"])]
    logger: Option<String>,

    /// CSV log path; implies `--logger csv`.
    #[arg(long)]
    log_file: Option<PathBuf>,

    /// Print a debug line for each stage of every invocation.
    #[arg(short, long)]
    debug: bool,

    /// Relay every request to another instance.
    #[arg(long, value_name = "URL", conflicts_with = "per_tenant_spawn")]
    forward: Option<String>,

    /// Start one child instance per tenant and relay to it.
    #[arg(long)]
    per_tenant_spawn: bool,

    /// Where functions send their nested invocations: `local`, `self` or a URL.
    #[arg(long, value_name = "ENDPOINT")]
    callback: Option<String>,

    /// Close connections with unread responses: `--reaper` or
    /// `--reaper=UNREAD_MS,IDLE_MS`.
    #[arg(long, value_name = "UNREAD_MS,IDLE_MS", num_args = 0..=1, require_equals = true, default_missing_value = "")]
    reaper: Option<String>,

    #[arg(long, env = snafu_core::ENV_FUNCTIONS_DIR)]
    functions_dir: Option<PathBuf>,

    /// Deploy the built-in sample functions.
    #[arg(long)]
    samples: bool,

    #[arg(long)]
    no_hot_deploy: bool,

    /// Worker executable for external executors.
    #[arg(long, env = snafu_core::ENV_WORKER)]
    worker: Option<PathBuf>,

    /// Tenant that requests belong to when no authenticator is active.
    #[arg(long, default_value = "default")]
    tenant: String,

    /// Exit when standard input closes.
    #[arg(long)]
    parent_watch: bool,
}

fn config(a: Args) -> Result<InstanceConfig, String> {
    let reaper: Option<ReaperConfig> = match a.reaper.as_deref() {
        None => None,
        Some(v) => Some(parse_reaper(v).map_err(|e| e.to_string())?),
    };
    let log_file = match (a.logger.as_deref(), a.log_file) {
        (Some("none"), _) => None,
        (_, Some(f)) => Some(f),
        (Some(_), None) => Some(default_log_file().to_path_buf()),
        (None, None) => None,
    };
    Ok(InstanceConfig {
        bind: a.bind,
        port: a.port,
        executor: a.executor,
        auth_mode: a.authenticator,
        accounts_file: a.accounts_file,
        debug: a.debug,
        log_file,
        forward_target: a.forward,
        callback_endpoint: a.callback,
        per_tenant_spawn: a.per_tenant_spawn,
        reaper,
        functions_dir: a.functions_dir,
        samples: a.samples,
        hot_deploy: !a.no_hot_deploy,
        worker: a.worker,
        tenant: a.tenant,
        parent_watch: a.parent_watch,
    })
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cfg = match config(Args::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("snafu-control: {e}");
            std::process::exit(2);
        }
    };
    let instance = match Instance::start(cfg) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("snafu-control: {e}");
            std::process::exit(1);
        }
    };
    for w in instance.warnings() {
        eprintln!("snafu-control: {w}");
    }
    {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "listening on {}", instance.url());
        let _ = out.flush();
    }
    instance.wait();
}
