//! A small blocking HTTP/1.1 server and client.
//!
//! The server runs one thread per connection and tracks every connection's
//! phase so that a reaper can close connections whose peers stopped
//! reading. Bodies are sized by `Content-Length`; chunked requests are
//! refused.

mod client;
mod server;

use std::io::{self, BufRead};

pub use client::{ClientResponse, HttpClient};
pub use server::{ConnCounts, ConnSnapshot, Handler, ReaperConfig, Server, ServerConfig};

pub(crate) const MAX_HEAD: usize = 64 * 1024;
pub(crate) const MAX_HEADERS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    /// Raw request target: path plus optional `?query`.
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn path(&self) -> &str {
        self.target.split_once('?').map_or(&self.target, |(p, _)| p)
    }

    pub fn query(&self) -> &str {
        self.target.split_once('?').map_or("", |(_, q)| q)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn signable(&self) -> crate::auth::SignableRequest<'_> {
        crate::auth::SignableRequest {
            method: &self.method,
            target: &self.target,
            headers: &self.headers,
            body: &self.body,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn new(status: u16) -> Self {
        Self {
            status,
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn json(status: u16, value: &serde_json::Value) -> Self {
        let mut r = Self::new(status);
        r.body = serde_json::to_vec(value).unwrap_or_default();
        r.headers
            .push(("Content-Type".into(), "application/json".into()));
        r
    }

    pub fn error(status: u16, message: impl std::fmt::Display) -> Self {
        Self::json(status, &serde_json::json!({ "message": message.to_string() }))
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }
}

pub(crate) fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

pub fn reason(status: u16) -> &'static str {
    match status {
        100 => "Continue",
        200 => "OK",
        201 => "Created",
        204 => "No Content",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        413 => "Payload Too Large",
        431 => "Request Header Fields Too Large",
        500 => "Internal Server Error",
        501 => "Not Implemented",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        504 => "Gateway Timeout",
        _ => "Unknown",
    }
}

/// Reads up to and including the blank line ending a message head.
/// `Ok(None)` means the peer closed before sending anything.
pub(crate) fn read_head(r: &mut impl BufRead, mut on_first_byte: impl FnMut()) -> io::Result<Option<Vec<u8>>> {
    let mut head = Vec::with_capacity(512);
    loop {
        let buf = r.fill_buf()?;
        if buf.is_empty() {
            return if head.is_empty() {
                Ok(None)
            } else {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated message head"))
            };
        }
        if head.is_empty() {
            on_first_byte();
        }
        // scan from a few bytes back so a terminator split across reads is found
        let start = head.len().saturating_sub(3);
        let take = buf.len();
        head.extend_from_slice(buf);
        if let Some(pos) = head[start..].windows(4).position(|w| w == b"\r\n\r\n") {
            let end = start + pos + 4;
            let extra = head.len() - end;
            r.consume(take - extra);
            head.truncate(end);
            return Ok(Some(head));
        }
        r.consume(take);
        if head.len() > MAX_HEAD {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "message head too large"));
        }
    }
}

pub(crate) fn content_length(headers: &[(String, String)]) -> io::Result<usize> {
    match find_header(headers, "content-length") {
        None => Ok(0),
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad Content-Length")),
    }
}
