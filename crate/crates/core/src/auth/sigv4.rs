//! AWS Signature Version 4, header variant.

use std::collections::HashMap;
use std::sync::OnceLock;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Timelike, Utc};
use hmac::{Hmac, KeyInit, Mac};
use parking_lot::Mutex;
use percent_encoding::{percent_decode, percent_encode, AsciiSet, NON_ALPHANUMERIC};
use sha2::{Digest, Sha256};

use super::{AccountList, AuthError};

pub const ALGORITHM: &str = "AWS4-HMAC-SHA256";
pub const UNSIGNED_PAYLOAD: &str = "UNSIGNED-PAYLOAD";
const SCOPE_TERMINATOR: &str = "aws4_request";
const HEX_UPPER: &[u8; 16] = b"0123456789ABCDEF";

/// Bytes left as-is in query components.
const UNRESERVED: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

/// Bytes left as-is in paths.
const PATH: &AsciiSet = &UNRESERVED.remove(b'/');

/// Headers a signer never covers: they are rewritten by proxies.
const UNSIGNABLE: [&str; 8] = [
    "authorization",
    "connection",
    "keep-alive",
    "expect",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

type HmacSha256 = Hmac<Sha256>;

/// The parts of an HTTP request that a signature covers.
#[derive(Clone, Copy, Debug)]
pub struct SignableRequest<'a> {
    pub method: &'a str,
    /// Request target as sent: raw path plus optional `?query`.
    pub target: &'a str,
    pub headers: &'a [(String, String)],
    pub body: &'a [u8],
}

impl<'a> SignableRequest<'a> {
    pub fn header(&self, name: &str) -> Option<&'a str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    fn path_and_query(&self) -> (&'a str, &'a str) {
        self.target.split_once('?').unwrap_or((self.target, ""))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedAuthHeader {
    pub algorithm: String,
    pub access_key_id: String,
    /// YYYYMMDD
    pub date: String,
    pub region: String,
    pub service: String,
    pub signed_headers: Vec<String>,
    pub signature: String,
}

impl ParsedAuthHeader {
    pub fn scope(&self) -> String {
        format!(
            "{}/{}/{}/{SCOPE_TERMINATOR}",
            self.date, self.region, self.service
        )
    }
}

fn malformed(why: impl Into<String>) -> AuthError {
    AuthError::Malformed(why.into())
}

/// Parses `AWS4-HMAC-SHA256 Credential=<akid>/<date>/<region>/<service>/aws4_request,
/// SignedHeaders=<h1;h2>, Signature=<hex>`.
pub fn parse_auth_header(header: &str) -> Result<ParsedAuthHeader, AuthError> {
    let header = header.trim();
    let (algorithm, rest) = header
        .split_once(char::is_whitespace)
        .ok_or_else(|| malformed("authorization header has no parameters"))?;
    if algorithm != ALGORITHM {
        return Err(malformed(format!("unsupported algorithm {algorithm:?}")));
    }

    let (mut credential, mut signed, mut signature) = (None, None, None);
    for part in rest.split(',') {
        let (k, v) = part
            .trim()
            .split_once('=')
            .ok_or_else(|| malformed(format!("bad component {part:?}")))?;
        let slot = match k {
            "Credential" => &mut credential,
            "SignedHeaders" => &mut signed,
            "Signature" => &mut signature,
            _ => return Err(malformed(format!("unknown component {k:?}"))),
        };
        if slot.replace(v).is_some() {
            return Err(malformed(format!("duplicate component {k:?}")));
        }
    }
    let credential = credential.ok_or_else(|| malformed("missing Credential"))?;
    let signed = signed.ok_or_else(|| malformed("missing SignedHeaders"))?;
    let signature = signature.ok_or_else(|| malformed("missing Signature"))?;

    // the access key id may itself contain '/', so split the scope from the right
    let mut scope = credential.rsplitn(5, '/');
    let terminator = scope.next().unwrap_or_default();
    let service = scope.next().unwrap_or_default();
    let region = scope.next();
    let date = scope.next().unwrap_or_default();
    let akid = scope.next().unwrap_or_default();
    let Some(region) = region else {
        return Err(malformed("credential scope is incomplete"));
    };
    if terminator != SCOPE_TERMINATOR {
        return Err(malformed("credential scope must end in aws4_request"));
    }
    if akid.is_empty() || service.is_empty() {
        return Err(malformed("credential scope is incomplete"));
    }
    if date.len() != 8 || !date.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed("credential date must be YYYYMMDD"));
    }
    if signature.len() != 64
        || !signature
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    {
        return Err(malformed("signature must be 64 lowercase hex digits"));
    }
    let signed_headers: Vec<String> = signed.split(';').map(str::to_string).collect();
    if signed_headers.iter().any(|h| h.is_empty() || *h != h.to_ascii_lowercase()) {
        return Err(malformed("signed headers must be lowercase names"));
    }

    Ok(ParsedAuthHeader {
        algorithm: algorithm.to_string(),
        access_key_id: akid.to_string(),
        date: date.to_string(),
        region: region.to_string(),
        service: service.to_string(),
        signed_headers,
        signature: signature.to_string(),
    })
}

fn hmac(key: &[u8], data: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

pub fn sha256_hex(data: &[u8]) -> String {
    let mut buf = [0u8; 64];
    hex::encode_to_slice(Sha256::digest(data), &mut buf).expect("64 hex digits");
    String::from_utf8(buf.to_vec()).expect("hex is ASCII")
}

/// `HMAC(HMAC(HMAC(HMAC("AWS4" + secret, date), region), service), "aws4_request")`
pub fn derive_signing_key(secret: &str, date: &str, region: &str, service: &str) -> [u8; 32] {
    type Key = (String, String, String, String);
    static CACHE: OnceLock<Mutex<HashMap<Key, [u8; 32]>>> = OnceLock::new();
    const CACHE_LIMIT: usize = 256;

    let cache = CACHE.get_or_init(Default::default);
    let k: Key = (secret.into(), date.into(), region.into(), service.into());
    if let Some(key) = cache.lock().get(&k) {
        return *key;
    }
    let key = derive_uncached(secret, date, region, service);
    let mut cache = cache.lock();
    if cache.len() >= CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(k, key);
    key
}

fn derive_uncached(secret: &str, date: &str, region: &str, service: &str) -> [u8; 32] {
    let k_date = hmac(format!("AWS4{secret}").as_bytes(), date.as_bytes());
    let k_region = hmac(&k_date, region.as_bytes());
    let k_service = hmac(&k_region, service.as_bytes());
    hmac(&k_service, SCOPE_TERMINATOR.as_bytes())
}

/// How the path of a request is turned into the canonical URI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UriMode {
    /// Remove `.`/`..` segments and empty segments.
    pub normalize: bool,
    /// Encode the path once more, so `%` becomes `%25`. Default for every
    /// service except S3.
    pub double_encode: bool,
}

impl UriMode {
    pub const DEFAULT: UriMode = UriMode {
        normalize: true,
        double_encode: true,
    };

    /// Canonical forms a verifier accepts, most common first.
    pub const ACCEPTED: [UriMode; 3] = [
        UriMode::DEFAULT,
        UriMode {
            normalize: true,
            double_encode: false,
        },
        UriMode {
            normalize: false,
            double_encode: false,
        },
    ];
}

fn normalize_path(path: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                out.pop();
            }
            s => out.push(s),
        }
    }
    let mut result = format!("/{}", out.join("/"));
    let trailing = ["/", "/.", "/..", "/./", "/../"]
        .iter()
        .any(|s| path.ends_with(s));
    if trailing && !result.ends_with('/') {
        result.push('/');
    }
    result
}

/// Encodes bytes that may not appear in a path, leaving valid `%XX`
/// escapes untouched.
fn encode_path_once(path: &str) -> String {
    let bytes = path.as_bytes();
    let mut out = String::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let escape = b == b'%'
            && i + 2 < bytes.len()
            && bytes[i + 1].is_ascii_hexdigit()
            && bytes[i + 2].is_ascii_hexdigit();
        if escape {
            out.push_str(&path[i..i + 3]);
            i += 3;
        } else if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~' | b'/') {
            out.push(b as char);
            i += 1;
        } else {
            out.push('%');
            out.push(char::from(HEX_UPPER[usize::from(b >> 4)]));
            out.push(char::from(HEX_UPPER[usize::from(b & 0xf)]));
            i += 1;
        }
    }
    out
}

/// True when every canonical form of `path` is `path` itself: only
/// unreserved bytes and no empty, `.` or `..` segments.
fn already_canonical(path: &str) -> bool {
    path.starts_with('/')
        && path.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~' | b'/'))
        && (path == "/" || path[1..].split('/').all(|seg| !matches!(seg, "" | "." | "..")))
}

pub fn canonical_uri(raw_path: &str, mode: UriMode) -> String {
    let path = if raw_path.is_empty() { "/" } else { raw_path };
    if already_canonical(path) {
        return path.to_string();
    }
    canonical_uri_general(path, mode)
}

fn canonical_uri_general(path: &str, mode: UriMode) -> String {
    let path = if mode.normalize {
        normalize_path(path)
    } else {
        path.to_string()
    };
    let once = encode_path_once(&path);
    if mode.double_encode {
        percent_encode(once.as_bytes(), PATH).to_string()
    } else {
        once
    }
}

pub fn canonical_query(raw_query: &str) -> String {
    if raw_query.is_empty() {
        return String::new();
    }
    let enc = |s: &str| {
        let decoded: Vec<u8> = percent_decode(s.as_bytes()).collect();
        percent_encode(&decoded, UNRESERVED).to_string()
    };
    let mut pairs: Vec<(String, String)> = raw_query
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (k, v) = p.split_once('=').unwrap_or((p, ""));
            (enc(k), enc(v))
        })
        .collect();
    pairs.sort();
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("&")
}

/// Values joined by `,`, each trimmed with inner whitespace runs folded to
/// one space.
fn push_canonical_header_value(out: &mut String, values: &[&str]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        for (j, word) in v.split_whitespace().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
}

/// The canonical request for the given signed headers. Every signed header
/// must be present.
pub fn canonical_request(
    req: &SignableRequest<'_>,
    signed_headers: &[String],
    payload_hash: &str,
    mode: UriMode,
) -> Result<String, AuthError> {
    let (path, query) = req.path_and_query();
    let mut out = String::with_capacity(256);
    out.push_str(req.method);
    out.push('\n');
    out.push_str(&canonical_uri(path, mode));
    out.push('\n');
    out.push_str(&canonical_query(query));
    out.push('\n');
    for name in signed_headers {
        let values: Vec<&str> = req
            .headers
            .iter()
            .filter(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
            .collect();
        if values.is_empty() {
            return Err(malformed(format!("signed header {name:?} is missing")));
        }
        out.push_str(name);
        out.push(':');
        push_canonical_header_value(&mut out, &values);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&signed_headers.join(";"));
    out.push('\n');
    out.push_str(payload_hash);
    Ok(out)
}

pub fn string_to_sign(amz_date: &str, scope: &str, canonical_request: &str) -> String {
    format!(
        "{ALGORITHM}\n{amz_date}\n{scope}\n{}",
        sha256_hex(canonical_request.as_bytes())
    )
}

/// `YYYYMMDD'T'HHMMSS'Z'`
pub fn format_amz_date(t: DateTime<Utc>) -> String {
    format!(
        "{:04}{:02}{:02}T{:02}{:02}{:02}Z",
        t.year(),
        t.month(),
        t.day(),
        t.hour(),
        t.minute(),
        t.second()
    )
}

fn parse_amz_date(s: &str) -> Option<DateTime<Utc>> {
    let b = s.as_bytes();
    if b.len() != 16 || b[8] != b'T' || b[15] != b'Z' {
        return None;
    }
    let num = |r: std::ops::Range<usize>| -> Option<u32> {
        b[r].iter().try_fold(0u32, |acc, &c| {
            c.is_ascii_digit().then(|| acc * 10 + u32::from(c - b'0'))
        })
    };
    let date = NaiveDate::from_ymd_opt(num(0..4)? as i32, num(4..6)?, num(6..8)?)?;
    let time = NaiveTime::from_hms_opt(num(9..11)?, num(11..13)?, num(13..15)?)?;
    Some(date.and_time(time).and_utc())
}

/// Request time from `X-Amz-Date`, falling back to `Date`.
pub fn request_time(req: &SignableRequest<'_>) -> Result<(DateTime<Utc>, String), AuthError> {
    if let Some(v) = req.header("x-amz-date") {
        let t = parse_amz_date(v.trim()).ok_or_else(|| malformed("bad X-Amz-Date"))?;
        return Ok((t, v.trim().to_string()));
    }
    if let Some(v) = req.header("date") {
        let t = DateTime::parse_from_rfc2822(v.trim())
            .map_err(|_| malformed("bad Date header"))?
            .with_timezone(&Utc);
        return Ok((t, format_amz_date(t)));
    }
    Err(malformed("request has no X-Amz-Date or Date header"))
}

/// Signing key material.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Credentials {
    pub access_key_id: String,
    pub secret_access_key: String,
}

#[derive(Clone, Debug)]
pub struct SigningParams<'a> {
    pub credentials: &'a Credentials,
    pub region: &'a str,
    pub service: &'a str,
    pub time: DateTime<Utc>,
    pub uri_mode: UriMode,
    /// Also send (and sign) `x-amz-content-sha256`.
    pub content_sha256_header: bool,
}

impl<'a> SigningParams<'a> {
    pub fn new(credentials: &'a Credentials, region: &'a str, service: &'a str) -> Self {
        Self {
            credentials,
            region,
            service,
            time: Utc::now(),
            uri_mode: UriMode::DEFAULT,
            content_sha256_header: true,
        }
    }
}

/// Intermediate values of a signature, exposed for diagnostics and tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigningOutput {
    /// Headers to add to the request, `Authorization` last.
    pub headers: Vec<(String, String)>,
    pub canonical_request: String,
    pub string_to_sign: String,
    pub signature: String,
}

/// Signs a request. Every header already on the request is signed apart
/// from hop-by-hop ones; `host` must be among them.
pub fn sign(req: &SignableRequest<'_>, params: &SigningParams<'_>) -> Result<SigningOutput, AuthError> {
    let amz_date = format_amz_date(params.time);
    let payload_hash = sha256_hex(req.body);
    let mut added = vec![("X-Amz-Date".to_string(), amz_date.clone())];
    if params.content_sha256_header {
        added.push(("x-amz-content-sha256".to_string(), payload_hash.clone()));
    }
    let all: Vec<(String, String)> = req
        .headers
        .iter()
        .filter(|(k, _)| !k.eq_ignore_ascii_case("x-amz-date"))
        .cloned()
        .chain(added.iter().cloned())
        .collect();
    let full = SignableRequest {
        headers: &all,
        ..*req
    };
    let mut signed: Vec<String> = all
        .iter()
        .map(|(k, _)| k.to_ascii_lowercase())
        .filter(|k| !UNSIGNABLE.contains(&k.as_str()))
        .collect();
    signed.sort();
    signed.dedup();
    if !signed.iter().any(|h| h == "host") {
        return Err(malformed("the host header must be signed"));
    }

    let canonical = canonical_request(&full, &signed, &payload_hash, params.uri_mode)?;
    let date = &amz_date[..8];
    let scope = format!("{date}/{}/{}/{SCOPE_TERMINATOR}", params.region, params.service);
    let sts = string_to_sign(&amz_date, &scope, &canonical);
    let key = derive_signing_key(
        &params.credentials.secret_access_key,
        date,
        params.region,
        params.service,
    );
    let signature = hex::encode(hmac(&key, sts.as_bytes()));
    added.push((
        "Authorization".to_string(),
        format!(
            "{ALGORITHM} Credential={}/{scope}, SignedHeaders={}, Signature={signature}",
            params.credentials.access_key_id,
            signed.join(";")
        ),
    ));
    Ok(SigningOutput {
        headers: added,
        canonical_request: canonical,
        string_to_sign: sts,
        signature,
    })
}

/// Verifies a signed request and returns the tenant of the signing account.
///
/// The canonical URI is tried in each of the [`UriMode::ACCEPTED`] forms, so
/// clients that sign with double or single path encoding are both served.
/// Every distinct candidate is checked so the work done does not depend on
/// which one matches.
pub fn verify_request(
    req: &SignableRequest<'_>,
    accounts: &AccountList,
    skew: chrono::Duration,
    now: DateTime<Utc>,
) -> Result<String, AuthError> {
    let auth = req.header("authorization").ok_or(AuthError::Missing)?;
    let parsed = parse_auth_header(auth)?;
    if !parsed.signed_headers.iter().any(|h| h == "host") {
        return Err(malformed("the host header must be signed"));
    }
    if parsed.signed_headers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(malformed("signed headers must be sorted and unique"));
    }
    let account = accounts
        .by_access_key(&parsed.access_key_id)
        .ok_or(AuthError::UnknownKey)?;

    let (time, amz_date) = request_time(req)?;
    if (now - time).abs() > skew {
        return Err(AuthError::Stale);
    }
    if amz_date[..8] != parsed.date {
        return Err(malformed("credential date does not match the request date"));
    }

    let body_hash = sha256_hex(req.body);
    let payload_hash = match req.header("x-amz-content-sha256").map(str::trim) {
        Some(UNSIGNED_PAYLOAD) => UNSIGNED_PAYLOAD.to_string(),
        Some(h) if h.eq_ignore_ascii_case(&body_hash) => h.to_string(),
        Some(_) => return Err(AuthError::PayloadMismatch),
        None => body_hash,
    };

    let presented = hex::decode(&parsed.signature).map_err(|_| malformed("bad signature hex"))?;
    let key = derive_signing_key(
        &account.secret_access_key,
        &parsed.date,
        &parsed.region,
        &parsed.service,
    );
    let scope = parsed.scope();
    let (path, _) = req.path_and_query();
    let mut seen: Vec<String> = Vec::with_capacity(UriMode::ACCEPTED.len());
    let mut matched = false;
    for mode in UriMode::ACCEPTED {
        // most paths read the same in every form
        let uri = canonical_uri(path, mode);
        if seen.contains(&uri) {
            continue;
        }
        seen.push(uri);
        let canonical = canonical_request(req, &parsed.signed_headers, &payload_hash, mode)?;
        let sts = string_to_sign(&amz_date, &scope, &canonical);
        let mut mac = HmacSha256::new_from_slice(&key).expect("HMAC accepts any key length");
        mac.update(sts.as_bytes());
        // constant-time comparison
        matched |= mac.verify_slice(&presented).is_ok();
    }
    if matched {
        Ok(account.tenant.clone())
    } else {
        Err(AuthError::SignatureMismatch)
    }
}
