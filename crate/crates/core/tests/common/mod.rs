#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde_json::Value;
use snafu_core::auth::sigv4::{self, Credentials, SigningParams, UriMode};
use snafu_core::auth::{Account, AccountList, SignableRequest};
use snafu_core::control::{Instance, InstanceConfig};

pub mod cron;
pub mod signing;

pub fn samples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

pub fn worker_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_snafu-worker"))
}

pub fn control_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_snafu-control"))
}

/// Naive recursive fib that counts every call it makes.
pub fn fib_oracle(n: u64, calls: &mut u64) -> u64 {
    *calls += 1;
    if n <= 2 {
        1
    } else {
        fib_oracle(n - 1, calls) + fib_oracle(n - 2, calls)
    }
}

pub fn fib_and_calls(n: u64) -> (u64, u64) {
    let mut calls = 0;
    let v = fib_oracle(n, &mut calls);
    (v, calls)
}

/// An instance on a free port with the sample functions and no functions
/// directory of its own.
pub fn instance(dir: &Path, tweak: impl FnOnce(&mut InstanceConfig)) -> Instance {
    let functions = dir.join("functions");
    std::fs::create_dir_all(&functions).unwrap();
    let mut cfg = InstanceConfig {
        port: 0,
        samples: true,
        functions_dir: Some(functions),
        worker: Some(worker_exe()),
        ..Default::default()
    };
    tweak(&mut cfg);
    Instance::start(cfg).expect("instance starts")
}

/// One column of a CSV log, header excluded.
pub fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).expect("log file exists");
    let idx = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    r.records().map(|row| row.expect("well-formed row")[idx].to_string()).collect()
}

// ---- SigV4 test-suite vectors ----

pub struct Vector {
    pub name: String,
    pub method: String,
    pub target: String,
    /// Headers of the unsigned request.
    pub headers: Vec<(String, String)>,
    /// Headers of the signed request, `Authorization` included.
    pub signed_headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub canonical_request: String,
    pub string_to_sign: String,
    pub signature: String,
    pub credentials: Credentials,
    pub token: Option<String>,
    pub omit_session_token: bool,
    pub region: String,
    pub service: String,
    pub normalize: bool,
    pub sign_body: bool,
    pub time: DateTime<Utc>,
}

/// Parses a raw request file. Lines starting with whitespace continue the
/// previous header value.
pub fn parse_request(text: &str) -> (String, String, Vec<(String, String)>, Vec<u8>) {
    let (head, body) = match text.find("\n\n") {
        Some(i) => (&text[..i], text[i + 2..].as_bytes().to_vec()),
        None => (text.trim_end_matches('\n'), Vec::new()),
    };
    let mut lines = head.lines();
    let first = lines.next().expect("request line");
    let method = first.split(' ').next().unwrap().to_string();
    let target = first[method.len() + 1..first.rfind(" HTTP/").unwrap()].to_string();
    let mut headers: Vec<(String, String)> = Vec::new();
    for line in lines {
        if line.starts_with([' ', '\t']) {
            let last = headers.last_mut().expect("continuation after a header");
            last.1.push('\n');
            last.1.push_str(line);
        } else {
            let (k, v) = line.split_once(':').expect("header line");
            headers.push((k.to_string(), v.to_string()));
        }
    }
    (method, target, headers, body)
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap_or_else(|e| panic!("{}/{f}: {e}", dir.display()))
}

pub fn sigv4_vectors() -> Vec<Vector> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sigv4");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| {
            let ctx: Value = serde_json::from_str(&read(d, "context.json")).unwrap();
            let (method, target, headers, body) = parse_request(&read(d, "request.txt"));
            let (_, _, signed_headers, _) = parse_request(&read(d, "header-signed-request.txt"));
            let c = &ctx["credentials"];
            Vector {
                name: d.file_name().unwrap().to_string_lossy().into_owned(),
                method,
                target,
                headers,
                signed_headers,
                body,
                canonical_request: read(d, "header-canonical-request.txt"),
                string_to_sign: read(d, "header-string-to-sign.txt"),
                signature: read(d, "header-signature.txt").trim().to_string(),
                credentials: Credentials {
                    access_key_id: c["access_key_id"].as_str().unwrap().into(),
                    secret_access_key: c["secret_access_key"].as_str().unwrap().into(),
                },
                token: c["token"].as_str().map(String::from),
                omit_session_token: ctx["omit_session_token"].as_bool().unwrap_or(false),
                region: ctx["region"].as_str().unwrap().into(),
                service: ctx["service"].as_str().unwrap().into(),
                normalize: ctx["normalize"].as_bool().unwrap(),
                sign_body: ctx["sign_body"].as_bool().unwrap_or(false),
                time: ctx["timestamp"].as_str().unwrap().parse().unwrap(),
            }
        })
        .collect()
}

/// Checks one vector four ways: canonical request, string to sign and
/// signature from our signer, and acceptance of the published signed
/// request by our verifier.
pub fn check_vector(v: &Vector) -> Result<(), String> {
    let mut to_sign = v.headers.clone();
    if let (Some(t), false) = (&v.token, v.omit_session_token) {
        to_sign.push(("X-Amz-Security-Token".into(), t.clone()));
    }
    let req = SignableRequest {
        method: &v.method,
        target: &v.target,
        headers: &to_sign,
        body: &v.body,
    };
    let mut params = SigningParams::new(&v.credentials, &v.region, &v.service);
    params.time = v.time;
    params.content_sha256_header = v.sign_body;
    // request lines in the fixtures carry the path before any client-side
    // encoding, so one encoding pass gives the canonical form
    params.uri_mode = UriMode {
        normalize: v.normalize,
        double_encode: false,
    };
    let out = sigv4::sign(&req, &params).map_err(|e| format!("{}: sign: {e}", v.name))?;
    if out.canonical_request != v.canonical_request {
        return Err(format!(
            "{}: canonical request differs\n--- ours\n{}\n--- expected\n{}",
            v.name, out.canonical_request, v.canonical_request
        ));
    }
    if out.string_to_sign != v.string_to_sign {
        return Err(format!("{}: string to sign differs", v.name));
    }
    if out.signature != v.signature {
        return Err(format!("{}: signature {} != {}", v.name, out.signature, v.signature));
    }

    let accounts = AccountList::new(vec![Account {
        access_key_id: v.credentials.access_key_id.clone(),
        secret_access_key: v.credentials.secret_access_key.clone(),
        tenant: "t".into(),
    }])
    .unwrap();
    let signed = SignableRequest {
        method: &v.method,
        target: &v.target,
        headers: &v.signed_headers,
        body: &v.body,
    };
    sigv4::verify_request(&signed, &accounts, chrono::Duration::minutes(15), v.time)
        .map_err(|e| format!("{}: published signed request rejected: {e}", v.name))?;
    Ok(())
}
