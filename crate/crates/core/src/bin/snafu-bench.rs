use std::fs::File;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};
use snafu_core::bench::econ::{economics_row, format_table, load_prices};
use snafu_core::bench::sweep::{summary_table, write_csv};
use snafu_core::bench::{check_ordering, config_sweep, reaper_experiment, table_configs, ReaperMode, ReaperOptions};
use snafu_core::control::control_program;
use snafu_core::http::ReaperConfig;
use snafu_core::observability::ConnSampler;

#[derive(Parser, Debug)]
#[command(name = "snafu-bench", about = "Benchmarks and cost estimates for the function host")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Calls per second of fib(N) across executor configurations.
    Sweep {
        #[arg(long = "fib", default_value_t = 15)]
        fib_n: u64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Per-repetition results as CSV.
        #[arg(long, default_value = "sweep.csv")]
        csv: PathBuf,
        /// snafu-control executable; found next to this one by default.
        #[arg(long)]
        control: Option<PathBuf>,
        /// Only the configurations with these labels.
        #[arg(long = "only", value_delimiter = ',')]
        only: Vec<String>,
    },
    /// Peak open sockets under slow-reading clients.
    Reaper {
        #[arg(long, default_value_t = 100)]
        clients: usize,
        #[arg(long)]
        mode: ReaperMode,
        /// Socket samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 6000)]
        hold_ms: u64,
        #[arg(long, default_value_t = 1000)]
        unread_ms: u64,
    },
    /// Monthly calls, cost and utility from a prices file.
    Econ {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<i32, String> {
    match cmd {
        Cmd::Sweep { fib_n, reps, csv, control, only } => {
            let program = control
                .or_else(control_program)
                .ok_or("cannot find snafu-control; pass --control")?;
            let targets: Vec<_> = table_configs()
                .into_iter()
                .filter(|t| only.is_empty() || only.contains(&t.label))
                .collect();
            let entries = config_sweep(&program, &targets, fib_n, reps, |e| match &e.result {
                Ok(r) => eprintln!("{}: median {:.2} cps", e.label, r.cps_median),
                Err(err) => eprintln!("{}: failed: {err}", e.label),
            });
            let f = File::create(&csv).map_err(|e| format!("{}: {e}", csv.display()))?;
            write_csv(&entries, f).map_err(|e| e.to_string())?;
            print!("{}", summary_table(&entries));
            let checks = check_ordering(&entries);
            for c in &checks {
                println!("{c}");
            }
            Ok(if checks.iter().all(|c| c.holds) { 0 } else { 1 })
        }
        Cmd::Reaper { clients, mode, csv, hold_ms, unread_ms } => {
            let opts = ReaperOptions {
                clients,
                hold: Duration::from_millis(hold_ms),
                reaper: ReaperConfig::parse(&format!("{unread_ms},60000"))?,
                ..Default::default()
            };
            let out = reaper_experiment(mode, &opts).map_err(|e| e.to_string())?;
            if let Some(path) = csv {
                ConnSampler::write_csv(&out.samples, &path).map_err(|e| e.to_string())?;
            }
            println!("{}", serde_json::to_string_pretty(&out).map_err(|e| e.to_string())?);
            Ok(if out.failures.is_empty() { 0 } else { 1 })
        }
        Cmd::Econ { input } => {
            let text = std::fs::read_to_string(&input).map_err(|e| format!("{}: {e}", input.display()))?;
            let inputs = load_prices(&text).map_err(|e| format!("{}: {e}", input.display()))?;
            let rows = inputs
                .iter()
                .map(|i| economics_row(i).map_err(|e| format!("{}: {e}", i.label)))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", format_table(&rows));
            Ok(0)
        }
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Args::parse().cmd) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("snafu-bench: {e}");
            std::process::exit(2);
        }
    }
}
