use std::io::IsTerminal;

use clap::Parser;
use snafu_core::cli::{run, CliArgs};

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let args = CliArgs::parse();
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let code = run(
        args,
        &mut stdin.lock(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
        interactive,
    );
    std::process::exit(code);
}
