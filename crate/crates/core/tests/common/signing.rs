//! Random requests and single-byte mutations for the signer and verifier.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use snafu_core::auth::sigv4::{self, Credentials, SigningParams};
use snafu_core::auth::{Account, AccountList, SignableRequest};

pub fn accounts() -> (Credentials, AccountList) {
    let creds = Credentials {
        access_key_id: "AKIDRANDOM".into(),
        secret_access_key: "r4nd0m/S3cret+Key".into(),
    };
    let list = AccountList::new(vec![Account {
        access_key_id: creds.access_key_id.clone(),
        secret_access_key: creds.secret_access_key.clone(),
        tenant: "rnd".into(),
    }])
    .unwrap();
    (creds, list)
}

pub fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 2, 29, 23, 59, 30).unwrap()
}

const PATH_CHARS: &[u8] = b"abcXYZ019-._~ !*'()$&+,;=@:%";

fn random_segment(rng: &mut StdRng) -> String {
    let len = rng.gen_range(1..10);
    let mut s = String::new();
    for _ in 0..len {
        match rng.gen_range(0..20) {
            0 => s.push('é'),
            1 => s.push('雪'),
            _ => s.push(PATH_CHARS[rng.gen_range(0..PATH_CHARS.len())] as char),
        }
    }
    s
}

pub struct Generated {
    pub method: String,
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub content_header: bool,
}

pub fn generate(rng: &mut StdRng) -> Generated {
    let method = ["GET", "POST", "PUT", "DELETE", "PATCH", "HEAD"][rng.gen_range(0..6)].to_string();
    let segs: Vec<String> = (0..rng.gen_range(1..5)).map(|_| random_segment(rng)).collect();
    let mut target: String = segs
        .iter()
        .map(|s| format!("/{}", percent_encoding::utf8_percent_encode(s, percent_encoding::NON_ALPHANUMERIC)))
        .collect();
    for i in 0..rng.gen_range(0..4) {
        target.push(if i == 0 { '?' } else { '&' });
        let k: String = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let v: String = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(b'0'..=b'9') as char).collect();
        target.push_str(&format!("{k}={v}"));
    }
    let mut headers = vec![("Host".to_string(), format!("h{}.example.com", rng.gen_range(0..100)))];
    for i in 0..rng.gen_range(0..4) {
        let v: String = (0..rng.gen_range(1..16)).map(|_| rng.gen_range(b'!'..=b'~') as char).collect();
        headers.push((format!("X-Custom-{i}"), v));
    }
    let body: Vec<u8> = (0..rng.gen_range(0..200)).map(|_| rng.gen()).collect();
    Generated {
        method,
        target,
        headers,
        body,
        content_header: rng.gen_bool(0.5),
    }
}

/// The request's headers plus the ones the signer adds.
pub fn signed_headers(g: &Generated, creds: &Credentials) -> Vec<(String, String)> {
    let req = SignableRequest {
        method: &g.method,
        target: &g.target,
        headers: &g.headers,
        body: &g.body,
    };
    let mut p = SigningParams::new(creds, "eu-north-1", "lambda");
    p.time = now();
    p.content_sha256_header = g.content_header;
    let out = sigv4::sign(&req, &p).expect("signs");
    let mut all = g.headers.clone();
    all.extend(out.headers);
    all
}

pub fn verify(method: &str, target: &str, headers: &[(String, String)], body: &[u8], list: &AccountList) -> bool {
    let req = SignableRequest {
        method,
        target,
        headers,
        body,
    };
    sigv4::verify_request(&req, list, Duration::minutes(5), now()).is_ok()
}

/// Signs and verifies `n` random requests.
pub fn round_trips(n: usize, seed: u64) -> Result<usize, String> {
    let (creds, list) = accounts();
    let mut rng = StdRng::seed_from_u64(seed);
    for i in 0..n {
        let g = generate(&mut rng);
        let h = signed_headers(&g, &creds);
        if !verify(&g.method, &g.target, &h, &g.body, &list) {
            return Err(format!("request {i} rejected: {} {} {:?}", g.method, g.target, g.headers));
        }
    }
    Ok(n)
}

/// A different byte from the same class, so the mutation cannot be undone
/// by canonicalization (case folding, whitespace trimming, path cleanup).
fn alternatives(b: u8) -> Vec<u8> {
    let pool: &[u8] = if b.is_ascii_uppercase() {
        b"ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    } else if b.is_ascii_lowercase() {
        b"abcdefghijklmnopqrstuvwxyz"
    } else if b.is_ascii_digit() {
        b"0123456789"
    } else {
        return vec![];
    };
    pool.iter().copied().filter(|&c| c != b).collect()
}

fn mutate(text: &str, i: usize, c: u8) -> String {
    let mut bytes = text.as_bytes().to_vec();
    bytes[i] = c;
    String::from_utf8(bytes).expect("ASCII substitution")
}

/// Mutates every byte of the method, path, body and each signed header
/// name and value of a signed invocation, and checks that every mutant is
/// rejected. Returns the number of mutants.
pub fn mutations_rejected() -> Result<usize, String> {
    let (creds, list) = accounts();
    let mut rng = StdRng::seed_from_u64(7);
    let mut checked = 0usize;
    for content_header in [true, false] {
        let g = Generated {
            method: "POST".into(),
            target: "/2015-03-31/functions/fib/invocations".into(),
            headers: vec![
                ("Host".into(), "lambda.example.com".into()),
                ("Content-Type".into(), "application/json".into()),
                ("X-Amz-Invocation-Type".into(), "RequestResponse".into()),
            ],
            body: br#"{"n": 20, "note": "mutate me"}"#.to_vec(),
            content_header,
        };
        let h = signed_headers(&g, &creds);
        if !verify(&g.method, &g.target, &h, &g.body, &list) {
            return Err("unmutated request rejected".into());
        }

        for i in 0..g.method.len() {
            for c in alternatives(g.method.as_bytes()[i]) {
                let m = mutate(&g.method, i, c);
                if verify(&m, &g.target, &h, &g.body, &list) {
                    return Err(format!("method {m} accepted"));
                }
                checked += 1;
            }
        }
        for i in 0..g.target.len() {
            for c in alternatives(g.target.as_bytes()[i]) {
                let t = mutate(&g.target, i, c);
                if verify(&g.method, &t, &h, &g.body, &list) {
                    return Err(format!("path {t} accepted"));
                }
                checked += 1;
            }
        }
        for i in 0..g.body.len() {
            let mut b = g.body.clone();
            b[i] = b[i].wrapping_add(rng.gen_range(1..=255));
            if verify(&g.method, &g.target, &h, &b, &list) {
                return Err(format!("body byte {i} mutation accepted"));
            }
            checked += 1;
        }
        for (hi, (name, value)) in h.iter().enumerate() {
            if name.eq_ignore_ascii_case("authorization") {
                continue;
            }
            for i in 0..name.len() {
                for c in alternatives(name.as_bytes()[i]) {
                    let mutated = mutate(name, i, c);
                    // header names are case-insensitive
                    if mutated.eq_ignore_ascii_case(name) {
                        continue;
                    }
                    let mut hs = h.clone();
                    hs[hi].0 = mutated.clone();
                    if verify(&g.method, &g.target, &hs, &g.body, &list) {
                        return Err(format!("header name {name} mutated to {mutated} accepted"));
                    }
                    checked += 1;
                }
            }
            for i in 0..value.len() {
                for c in alternatives(value.as_bytes()[i]) {
                    let mutated = mutate(value, i, c);
                    let mut hs = h.clone();
                    hs[hi].1 = mutated.clone();
                    if verify(&g.method, &g.target, &hs, &g.body, &list) {
                        return Err(format!("header {name}: {value} mutated to {mutated} accepted"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}
