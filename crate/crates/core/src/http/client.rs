use std::collections::HashMap;
use std::io::{self, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use parking_lot::Mutex;

use super::{content_length, find_header, read_head, MAX_HEADERS};
use crate::auth::ClientAuth;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl ClientResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn json(&self) -> serde_json::Result<serde_json::Value> {
        serde_json::from_slice(&self.body)
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// A blocking client keeping idle keep-alive connections per authority.
pub struct HttpClient {
    idle: Mutex<HashMap<String, Vec<Conn>>>,
    connect_timeout: Duration,
    read_timeout: Option<Duration>,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpClient {
    pub fn new() -> Self {
        Self {
            idle: Mutex::new(HashMap::new()),
            connect_timeout: Duration::from_secs(5),
            read_timeout: None,
        }
    }

    pub fn with_read_timeout(mut self, t: Duration) -> Self {
        self.read_timeout = Some(t);
        self
    }

    /// Sends one request. `url` is absolute (`http://host:port/path?q`).
    /// A reused connection that turns out to be closed is retried once on a
    /// fresh one.
    pub fn request(
        &self,
        method: &str,
        url: &str,
        headers: &[(String, String)],
        body: &[u8],
        auth: &ClientAuth,
    ) -> io::Result<ClientResponse> {
        let parsed = url::Url::parse(url)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, format!("{url}: {e}")))?;
        if parsed.scheme() != "http" {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("unsupported scheme in {url}"),
            ));
        }
        let host = parsed
            .host_str()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("no host in {url}")))?;
        let port = parsed.port_or_known_default().unwrap_or(80);
        let authority = match parsed.port() {
            Some(p) => format!("{host}:{p}"),
            None => host.to_string(),
        };
        let mut target = parsed.path().to_string();
        if let Some(q) = parsed.query() {
            target.push('?');
            target.push_str(q);
        }

        // a caller-supplied Host is kept, so relayed requests stay verifiable
        let host_header = find_header(headers, "host").map_or(authority, str::to_string);
        let mut all = vec![("Host".to_string(), host_header)];
        all.extend(
            headers
                .iter()
                .filter(|(k, _)| !k.eq_ignore_ascii_case("host"))
                .cloned(),
        );
        if !body.is_empty() || method != "GET" {
            all.push(("Content-Length".into(), body.len().to_string()));
        }
        let signed = auth.headers_for(method, &target, &all, body);
        all.extend(signed);

        let mut msg = format!("{method} {target} HTTP/1.1\r\n");
        for (k, v) in &all {
            msg.push_str(&format!("{k}: {v}\r\n"));
        }
        msg.push_str("\r\n");
        let mut wire = msg.into_bytes();
        wire.extend_from_slice(body);

        let key = format!("{host}:{port}");
        if let Some(conn) = self.take_idle(&key) {
            match self.exchange(conn, &wire) {
                Ok((resp, conn)) => return Ok(self.finish(&key, resp, conn)),
                Err((e, sent_anything)) if !sent_anything => {
                    tracing::debug!("stale connection to {key}: {e}");
                }
                Err((e, _)) => return Err(e),
            }
        }
        let conn = self.connect(host, port)?;
        match self.exchange(conn, &wire) {
            Ok((resp, conn)) => Ok(self.finish(&key, resp, conn)),
            Err((e, _)) => Err(e),
        }
    }

    fn take_idle(&self, key: &str) -> Option<Conn> {
        self.idle.lock().get_mut(key).and_then(|v| v.pop())
    }

    fn finish(&self, key: &str, resp: ClientResponse, conn: Option<Conn>) -> ClientResponse {
        if let Some(c) = conn {
            self.idle.lock().entry(key.to_string()).or_default().push(c);
        }
        resp
    }

    fn connect(&self, host: &str, port: u16) -> io::Result<Conn> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {host}"));
        for addr in (host, port).to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.connect_timeout) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    s.set_read_timeout(self.read_timeout)?;
                    let writer = s.try_clone()?;
                    return Ok(Conn {
                        reader: BufReader::new(s),
                        writer,
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// On failure the flag tells whether any response bytes arrived, in
    /// which case the request must not be repeated.
    #[allow(clippy::type_complexity)]
    fn exchange(
        &self,
        mut conn: Conn,
        wire: &[u8],
    ) -> Result<(ClientResponse, Option<Conn>), (io::Error, bool)> {
        conn.writer
            .write_all(wire)
            .and_then(|_| conn.writer.flush())
            .map_err(|e| (e, false))?;
        let mut got_bytes = false;
        let head = match read_head(&mut conn.reader, || got_bytes = true) {
            Ok(Some(h)) => h,
            Ok(None) => {
                return Err((
                    io::Error::new(io::ErrorKind::ConnectionAborted, "connection closed"),
                    false,
                ))
            }
            Err(e) => {
                let stale = !got_bytes && is_reset(&e);
                return Err((e, !stale));
            }
        };
        let fail = |e: io::Error| (e, true);
        let mut raw = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut parsed = httparse::Response::new(&mut raw);
        parsed
            .parse(&head)
            .map_err(|e| fail(io::Error::new(io::ErrorKind::InvalidData, e.to_string())))?;
        let status = parsed.code.unwrap_or(0);
        let headers: Vec<(String, String)> = parsed
            .headers
            .iter()
            .map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).into_owned()))
            .collect();
        if status == 100 {
            return self.read_after_continue(conn);
        }
        let len = content_length(&headers).map_err(fail)?;
        let mut body = vec![0u8; len];
        conn.reader.read_exact(&mut body).map_err(fail)?;
        let close = find_header(&headers, "connection").is_some_and(|v| v.eq_ignore_ascii_case("close"));
        Ok((
            ClientResponse {
                status,
                headers,
                body,
            },
            (!close).then_some(conn),
        ))
    }

    #[allow(clippy::type_complexity)]
    fn read_after_continue(
        &self,
        conn: Conn,
    ) -> Result<(ClientResponse, Option<Conn>), (io::Error, bool)> {
        // the body was sent up front; the interim response is just skipped
        self.exchange(conn, &[]).map_err(|(e, _)| (e, true))
    }
}

fn is_reset(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::UnexpectedEof
    )
}
