use std::io;

use crate::auth::ClientAuth;
use crate::http::{ClientResponse, HttpClient, Request, Response};

// Headers that describe one hop rather than the request.
const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "content-length",
    "transfer-encoding",
    "expect",
    "te",
    "trailer",
    "upgrade",
    "proxy-connection",
];

/// Relays `req` to the instance at `target` with the same method, path and
/// body. End-to-end headers, including `Host` and `Authorization`, are kept;
/// `extra` headers replace any of the same name.
pub fn forward_request(
    client: &HttpClient,
    target: &str,
    req: &Request,
    extra: &[(String, String)],
) -> io::Result<ClientResponse> {
    let url = format!("{}{}", target.trim_end_matches('/'), req.target);
    let mut headers: Vec<(String, String)> = req
        .headers
        .iter()
        .filter(|(k, _)| {
            let k = k.to_ascii_lowercase();
            !HOP_BY_HOP.contains(&k.as_str()) && !extra.iter().any(|(e, _)| e.eq_ignore_ascii_case(&k))
        })
        .cloned()
        .collect();
    headers.extend(extra.iter().cloned());
    client.request(&req.method, &url, &headers, &req.body, &ClientAuth::None)
}

/// The downstream response as this instance's response.
pub fn relay_response(r: ClientResponse) -> Response {
    let mut resp = Response::new(r.status);
    resp.headers = r
        .headers
        .into_iter()
        .filter(|(k, _)| !HOP_BY_HOP.contains(&k.to_ascii_lowercase().as_str()))
        .collect();
    resp.body = r.body;
    resp
}
