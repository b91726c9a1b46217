//! Worker serving built-in functions over the worker protocol:
//! `snafu-worker <source-file>`.

use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let Some(source) = args.get(1) else {
        eprintln!("usage: snafu-worker <source-file>");
        std::process::exit(2);
    };
    let stdin = std::io::stdin();
    snafu_core::worker::stub::serve(Path::new(source), stdin.lock(), std::io::stdout());
}
