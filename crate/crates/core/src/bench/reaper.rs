//! Open sockets with and without the reaper, under clients that send a
//! request and then leave the response unread for a while.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::control::{Instance, InstanceConfig};
use crate::http::ReaperConfig;
use crate::observability::{ConnSampler, ConnectionStat};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReaperMode {
    With,
    Without,
}

impl std::str::FromStr for ReaperMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "with" => Ok(ReaperMode::With),
            "without" => Ok(ReaperMode::Without),
            _ => Err(format!("mode must be `with` or `without`, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReaperOptions {
    pub clients: usize,
    /// Delay between client starts.
    pub stagger: Duration,
    /// How long a client waits before reading its response.
    pub hold: Duration,
    /// Reaper setting used in `with` mode.
    pub reaper: ReaperConfig,
    pub sample_interval: Duration,
}

impl Default for ReaperOptions {
    fn default() -> Self {
        Self {
            clients: 100,
            stagger: Duration::from_millis(50),
            hold: Duration::from_secs(6),
            reaper: ReaperConfig::parse("1000,60000").expect("valid reaper setting"),
            sample_interval: Duration::from_millis(50),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReaperOutcome {
    pub mode: ReaperMode,
    pub clients: usize,
    /// Most connections open at once, as tracked by the server.
    pub peak_open: u64,
    /// Peak seen by the sampler.
    pub sampled_peak: usize,
    pub reaped: u64,
    /// Clients that read a complete and correct response.
    pub complete: usize,
    pub failures: Vec<String>,
    pub wall_secs: f64,
    #[serde(skip)]
    pub samples: Vec<ConnectionStat>,
}

const FUNCTION: &str = "fib_delay";
const EVENT: &str = r#"{"n":1}"#;
const EXPECTED: &str = "1";

/// Reads one HTTP response; returns status and body.
fn read_response(s: &mut TcpStream) -> std::result::Result<(u16, Vec<u8>), String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        let mut headers = [httparse::EMPTY_HEADER; 32];
        let mut resp = httparse::Response::new(&mut headers);
        if let Ok(httparse::Status::Complete(head)) = resp.parse(&buf) {
            let len = resp
                .headers
                .iter()
                .find(|h| h.name.eq_ignore_ascii_case("content-length"))
                .and_then(|h| std::str::from_utf8(h.value).ok()?.trim().parse::<usize>().ok())
                .ok_or("response without Content-Length")?;
            if buf.len() >= head + len {
                return Ok((resp.code.unwrap_or(0), buf[head..head + len].to_vec()));
            }
        }
        match s.read(&mut chunk) {
            Ok(0) => return Err(format!("connection closed after {} bytes", buf.len())),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) => return Err(format!("read failed after {} bytes: {e}", buf.len())),
        }
    }
}

fn slow_client(addr: SocketAddr, hold: Duration) -> std::result::Result<(), String> {
    let mut s = TcpStream::connect(addr).map_err(|e| format!("connect: {e}"))?;
    let _ = s.set_nodelay(true);
    s.set_read_timeout(Some(Duration::from_secs(30))).map_err(|e| e.to_string())?;
    let req = format!(
        "POST /2015-03-31/functions/{FUNCTION}/invocations HTTP/1.1\r\nHost: {addr}\r\n\
         Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{EVENT}",
        EVENT.len()
    );
    s.write_all(req.as_bytes()).map_err(|e| format!("write: {e}"))?;
    std::thread::sleep(hold);
    let (status, body) = read_response(&mut s)?;
    if status != 200 || body != EXPECTED.as_bytes() {
        return Err(format!("status {status}, body {:?}", String::from_utf8_lossy(&body)));
    }
    Ok(())
}

/// Runs the slow-reader workload against an in-process instance.
pub fn reaper_experiment(mode: ReaperMode, opts: &ReaperOptions) -> Result<ReaperOutcome> {
    let dir = tempfile::tempdir()?;
    let instance = Instance::start(InstanceConfig {
        port: 0,
        samples: true,
        hot_deploy: false,
        functions_dir: Some(dir.path().to_path_buf()),
        reaper: (mode == ReaperMode::With).then_some(opts.reaper),
        ..Default::default()
    })?;
    let server = instance.server();
    let sampler = ConnSampler::start(opts.sample_interval, server.probe());
    let addr = instance.local_addr();

    let start = Instant::now();
    let handles: Vec<_> = (0..opts.clients)
        .map(|i| {
            let (stagger, hold) = (opts.stagger * i as u32, opts.hold);
            std::thread::spawn(move || {
                std::thread::sleep(stagger);
                slow_client(addr, hold).map_err(|e| format!("client {i}: {e}"))
            })
        })
        .collect();
    let mut failures = Vec::new();
    let mut complete = 0;
    for h in handles {
        match h.join() {
            Ok(Ok(())) => complete += 1,
            Ok(Err(e)) => failures.push(e),
            Err(_) => failures.push("client thread panicked".into()),
        }
    }
    let wall_secs = start.elapsed().as_secs_f64();
    // let the server notice the closed sockets before the last samples
    std::thread::sleep(opts.sample_interval * 3);
    let samples = sampler.stop();
    Ok(ReaperOutcome {
        mode,
        clients: opts.clients,
        peak_open: server.peak_open(),
        sampled_peak: samples.iter().map(|s| s.open_count).max().unwrap_or(0),
        reaped: server.reaped(),
        complete,
        failures,
        wall_secs,
        samples,
    })
}
