use std::collections::HashMap;
use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::{content_length, find_header, read_head, reason, Request, Response, MAX_HEADERS};

pub trait Handler: Send + Sync + 'static {
    fn handle(&self, req: Request) -> Response;
}

impl<F> Handler for F
where
    F: Fn(Request) -> Response + Send + Sync + 'static,
{
    fn handle(&self, req: Request) -> Response {
        self(req)
    }
}

/// Connection reaper thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReaperConfig {
    /// A written response whose connection saw no further activity for this
    /// long is treated as unread, and so is a response write that stalls.
    pub unread_timeout: Duration,
    /// Connections waiting for a request this long are closed.
    pub idle_timeout: Duration,
    pub interval: Duration,
}

impl Default for ReaperConfig {
    fn default() -> Self {
        Self {
            unread_timeout: Duration::from_millis(5000),
            idle_timeout: Duration::from_millis(60_000),
            interval: Duration::from_secs(1),
        }
    }
}

impl ReaperConfig {
    /// Parses `unread_ms,idle_ms`; an empty string gives the defaults.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        let s = s.trim();
        if s.is_empty() {
            return Ok(cfg);
        }
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| format!("expected UNREAD_MS,IDLE_MS, got {s:?}"))?;
        let ms = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map(Duration::from_millis)
                .map_err(|_| format!("not a number of milliseconds: {v:?}"))
        };
        cfg.unread_timeout = ms(a)?;
        cfg.idle_timeout = ms(b)?;
        if cfg.unread_timeout.is_zero() || cfg.idle_timeout.is_zero() {
            return Err("reaper timeouts must be positive".into());
        }
        cfg.interval = cfg.interval.min(cfg.unread_timeout / 2).max(Duration::from_millis(10));
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ServerConfig {
    pub reaper: Option<ReaperConfig>,
    pub max_body: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Reading,
    InFlight,
    Writing,
    Written,
}

struct Conn {
    stream: TcpStream,
    phase: Phase,
    since: Instant,
}

/// Counters for the open connections, as seen by the sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConnCounts {
    pub open: usize,
    /// Connections whose last response is written but not yet followed by
    /// another request or a close.
    pub unread: usize,
    pub in_flight: usize,
}

/// Connection counters at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConnSnapshot {
    pub counts: ConnCounts,
    pub peak: u64,
    pub reaped: u64,
    pub accepted: u64,
}

#[derive(Default)]
struct ConnTable {
    conns: Mutex<HashMap<u64, Conn>>,
    next: AtomicU64,
    peak: AtomicU64,
    reaped: AtomicU64,
    accepted: AtomicU64,
}

impl ConnTable {
    fn insert(&self, stream: TcpStream) -> u64 {
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        let mut conns = self.conns.lock();
        conns.insert(
            id,
            Conn {
                stream,
                phase: Phase::Idle,
                since: Instant::now(),
            },
        );
        self.peak.fetch_max(conns.len() as u64, Ordering::Relaxed);
        self.accepted.fetch_add(1, Ordering::Relaxed);
        id
    }

    fn set(&self, id: u64, phase: Phase) {
        if let Some(c) = self.conns.lock().get_mut(&id) {
            c.phase = phase;
            c.since = Instant::now();
        }
    }

    fn remove(&self, id: u64) {
        self.conns.lock().remove(&id);
    }

    fn snapshot(&self) -> ConnSnapshot {
        ConnSnapshot {
            counts: self.counts(),
            peak: self.peak.load(Ordering::Relaxed),
            reaped: self.reaped.load(Ordering::Relaxed),
            accepted: self.accepted.load(Ordering::Relaxed),
        }
    }

    fn counts(&self) -> ConnCounts {
        let conns = self.conns.lock();
        let mut c = ConnCounts {
            open: conns.len(),
            ..Default::default()
        };
        for conn in conns.values() {
            match conn.phase {
                Phase::Written | Phase::Writing => c.unread += 1,
                Phase::InFlight => c.in_flight += 1,
                _ => {}
            }
        }
        c
    }

    /// Closes overdue connections. A connection with an execution in flight
    /// is never touched.
    fn reap(&self, cfg: &ReaperConfig, now: Instant) -> usize {
        let mut conns = self.conns.lock();
        let mut closed = Vec::new();
        for (id, c) in conns.iter() {
            let age = now.saturating_duration_since(c.since);
            let overdue = match c.phase {
                Phase::InFlight => false,
                Phase::Writing | Phase::Written => age >= cfg.unread_timeout,
                Phase::Idle | Phase::Reading => age >= cfg.idle_timeout,
            };
            if overdue {
                let _ = c.stream.shutdown(Shutdown::Both);
                closed.push(*id);
            }
        }
        for id in &closed {
            conns.remove(id);
        }
        self.reaped.fetch_add(closed.len() as u64, Ordering::Relaxed);
        closed.len()
    }

    fn close_all(&self) {
        for c in self.conns.lock().drain().map(|(_, c)| c) {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
    }
}

/// A running server. Dropping it stops accepting and closes connections.
pub struct Server {
    addr: SocketAddr,
    table: Arc<ConnTable>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn bind(
        addr: impl ToSocketAddrs,
        config: ServerConfig,
        handler: Arc<dyn Handler>,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let table = Arc::new(ConnTable::default());
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        let (t, s) = (table.clone(), stop.clone());
        let max_body = config.max_body;
        threads.push(
            std::thread::Builder::new()
                .name("http-accept".into())
                .spawn(move || accept_loop(listener, t, s, handler, max_body))?,
        );

        if let Some(cfg) = config.reaper {
            let (t, s) = (table.clone(), stop.clone());
            threads.push(std::thread::Builder::new().name("http-reaper".into()).spawn(
                move || {
                    while !s.load(Ordering::Relaxed) {
                        std::thread::sleep(cfg.interval);
                        t.reap(&cfg, Instant::now());
                    }
                },
            )?);
        }

        Ok(Self {
            addr,
            table,
            stop,
            threads,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn counts(&self) -> ConnCounts {
        self.table.counts()
    }

    pub fn peak_open(&self) -> u64 {
        self.table.peak.load(Ordering::Relaxed)
    }

    pub fn reaped(&self) -> u64 {
        self.table.reaped.load(Ordering::Relaxed)
    }

    pub fn accepted(&self) -> u64 {
        self.table.accepted.load(Ordering::Relaxed)
    }

    /// A probe suitable for the connection sampler: `(open, unread)`.
    pub fn probe(&self) -> impl Fn() -> (usize, usize) + Send + 'static {
        let t = self.table.clone();
        move || {
            let c = t.counts();
            (c.open, c.unread)
        }
    }

    pub fn snapshot_fn(&self) -> impl Fn() -> ConnSnapshot + Send + Sync + 'static {
        let t = self.table.clone();
        move || t.snapshot()
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        self.table.close_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    table: Arc<ConnTable>,
    stop: Arc<AtomicBool>,
    handler: Arc<dyn Handler>,
    max_body: Option<usize>,
) {
    for stream in listener.incoming() {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        let Ok(tracked) = stream.try_clone() else { continue };
        let id = table.insert(tracked);
        let (t, h) = (table.clone(), handler.clone());
        let spawned = std::thread::Builder::new()
            .name("http-conn".into())
            .spawn(move || {
                let _ = serve_conn(stream, id, &t, h.as_ref(), max_body);
                t.remove(id);
            });
        if spawned.is_err() {
            table.remove(id);
        }
    }
}

fn write_response(w: &mut impl Write, resp: &Response, close: bool) -> io::Result<()> {
    let mut head = format!("HTTP/1.1 {} {}\r\n", resp.status, reason(resp.status));
    for (k, v) in &resp.headers {
        if k.eq_ignore_ascii_case("content-length") || k.eq_ignore_ascii_case("connection") {
            continue;
        }
        head.push_str(k);
        head.push_str(": ");
        head.push_str(v);
        head.push_str("\r\n");
    }
    head.push_str(&format!("Content-Length: {}\r\n", resp.body.len()));
    if close {
        head.push_str("Connection: close\r\n");
    }
    head.push_str("\r\n");
    let mut buf = head.into_bytes();
    buf.extend_from_slice(&resp.body);
    w.write_all(&buf)?;
    w.flush()
}

fn serve_conn(
    stream: TcpStream,
    id: u64,
    table: &ConnTable,
    handler: &dyn Handler,
    max_body: Option<usize>,
) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let Some(head) = read_head(&mut reader, || table.set(id, Phase::Reading))? else {
            return Ok(());
        };
        let mut raw = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut parsed = httparse::Request::new(&mut raw);
        match parsed.parse(&head) {
            Ok(httparse::Status::Complete(_)) => {}
            Ok(httparse::Status::Partial) | Err(_) => {
                table.set(id, Phase::Writing);
                write_response(&mut writer, &Response::error(400, "malformed request"), true)?;
                return Ok(());
            }
        }
        let method = parsed.method.unwrap_or("").to_string();
        let target = parsed.path.unwrap_or("/").to_string();
        let http10 = parsed.version == Some(0);
        let headers: Vec<(String, String)> = parsed
            .headers
            .iter()
            .map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).into_owned()))
            .collect();

        let conn_hdr = find_header(&headers, "connection").map(|v| v.to_ascii_lowercase());
        let mut close = match conn_hdr.as_deref() {
            Some(v) if v.contains("close") => true,
            Some(v) if v.contains("keep-alive") => false,
            _ => http10,
        };

        if find_header(&headers, "transfer-encoding").is_some() {
            table.set(id, Phase::Writing);
            write_response(
                &mut writer,
                &Response::error(501, "chunked request bodies are not supported"),
                true,
            )?;
            return Ok(());
        }
        let len = match content_length(&headers) {
            Ok(n) => n,
            Err(e) => {
                table.set(id, Phase::Writing);
                write_response(&mut writer, &Response::error(400, e), true)?;
                return Ok(());
            }
        };
        if max_body.is_some_and(|m| len > m) {
            table.set(id, Phase::Writing);
            write_response(&mut writer, &Response::error(413, "request body too large"), true)?;
            return Ok(());
        }
        if find_header(&headers, "expect").is_some_and(|v| v.eq_ignore_ascii_case("100-continue"))
            && len > 0
        {
            writer.write_all(b"HTTP/1.1 100 Continue\r\n\r\n")?;
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body)?;

        table.set(id, Phase::InFlight);
        let resp = handler.handle(Request {
            method,
            target,
            headers,
            body,
        });
        if resp
            .header("connection")
            .is_some_and(|v| v.eq_ignore_ascii_case("close"))
        {
            close = true;
        }
        table.set(id, Phase::Writing);
        write_response(&mut writer, &resp, close)?;
        if close {
            let _ = writer.shutdown(Shutdown::Write);
            return Ok(());
        }
        table.set(id, Phase::Written);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufRead;

    fn echo_server(config: ServerConfig) -> Server {
        Server::bind(
            "127.0.0.1:0",
            config,
            Arc::new(|req: Request| {
                if req.path() == "/slow" {
                    std::thread::sleep(Duration::from_millis(400));
                }
                let mut r = Response::new(200);
                r.body = req.body;
                r.headers.push(("X-Method".into(), req.method));
                r
            }),
        )
        .unwrap()
    }

    fn read_response(r: &mut BufReader<TcpStream>) -> (u16, Vec<u8>) {
        let head = read_head(r, || {}).unwrap().unwrap();
        let mut raw = [httparse::EMPTY_HEADER; 16];
        let mut resp = httparse::Response::new(&mut raw);
        resp.parse(&head).unwrap();
        let status = resp.code.unwrap();
        let headers: Vec<(String, String)> = resp
            .headers
            .iter()
            .map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).into_owned()))
            .collect();
        let mut body = vec![0; content_length(&headers).unwrap()];
        r.read_exact(&mut body).unwrap();
        (status, body)
    }

    #[test]
    fn keep_alive_serves_several_requests() {
        let server = echo_server(ServerConfig::default());
        let s = TcpStream::connect(server.local_addr()).unwrap();
        let mut w = s.try_clone().unwrap();
        let mut r = BufReader::new(s);
        for body in ["one", "two", "three"] {
            write!(w, "POST /x HTTP/1.1\r\nHost: a\r\nContent-Length: {}\r\n\r\n{body}", body.len())
                .unwrap();
            let (status, got) = read_response(&mut r);
            assert_eq!(status, 200);
            assert_eq!(got, body.as_bytes());
        }
        assert_eq!(server.accepted(), 1);
    }

    #[test]
    fn expect_continue_and_chunked() {
        let server = echo_server(ServerConfig::default());
        let s = TcpStream::connect(server.local_addr()).unwrap();
        let mut w = s.try_clone().unwrap();
        let mut r = BufReader::new(s);
        write!(w, "POST / HTTP/1.1\r\nExpect: 100-continue\r\nContent-Length: 2\r\n\r\n").unwrap();
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        assert!(line.starts_with("HTTP/1.1 100"));
        line.clear();
        r.read_line(&mut line).unwrap();
        w.write_all(b"hi").unwrap();
        assert_eq!(read_response(&mut r), (200, b"hi".to_vec()));

        write!(w, "POST / HTTP/1.1\r\nTransfer-Encoding: chunked\r\n\r\n").unwrap();
        assert_eq!(read_response(&mut r).0, 501);
    }

    #[test]
    fn reaper_closes_unread_connections_but_not_in_flight_ones() {
        let cfg = ReaperConfig {
            unread_timeout: Duration::from_millis(150),
            idle_timeout: Duration::from_millis(150),
            interval: Duration::from_millis(20),
        };
        let server = echo_server(ServerConfig {
            reaper: Some(cfg),
            max_body: None,
        });

        // an execution longer than both timeouts still completes
        let s = TcpStream::connect(server.local_addr()).unwrap();
        let mut w = s.try_clone().unwrap();
        let mut r = BufReader::new(s);
        w.write_all(b"GET /slow HTTP/1.1\r\n\r\n").unwrap();
        assert_eq!(read_response(&mut r).0, 200);

        // after the response, nothing else happens: the reaper closes it
        let deadline = Instant::now() + Duration::from_secs(3);
        while server.counts().open > 0 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(server.counts().open, 0);
        assert!(server.reaped() >= 1);
        let mut rest = Vec::new();
        assert_eq!(r.read_to_end(&mut rest).unwrap_or(0), 0);
    }

    #[test]
    fn without_reaper_connections_stay_open() {
        let server = echo_server(ServerConfig::default());
        let _s = TcpStream::connect(server.local_addr()).unwrap();
        std::thread::sleep(Duration::from_millis(100));
        assert_eq!(server.counts().open, 1);
        assert_eq!(server.peak_open(), 1);
    }

    #[test]
    fn reaper_spec_parsing() {
        assert_eq!(ReaperConfig::parse("").unwrap(), ReaperConfig::default());
        let c = ReaperConfig::parse("1000,2000").unwrap();
        assert_eq!(c.unread_timeout, Duration::from_millis(1000));
        assert_eq!(c.idle_timeout, Duration::from_millis(2000));
        assert_eq!(c.interval, Duration::from_millis(500));
        assert!(ReaperConfig::parse("5").is_err());
        assert!(ReaperConfig::parse("0,5").is_err());
    }
}
