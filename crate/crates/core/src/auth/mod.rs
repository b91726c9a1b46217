//! Request authentication: none, shared-secret accounts, or AWS SigV4.

pub mod sigv4;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use chrono::Utc;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::DEFAULT_TENANT;
pub use sigv4::{Credentials, SignableRequest};

/// Header carrying the shared secret in `accounts` mode.
pub const AUTH_KEY_HEADER: &str = "X-Auth-Key";

/// Default accounts file.
pub const DEFAULT_ACCOUNTS_FILE: &str = "accounts.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub access_key_id: String,
    pub secret_access_key: String,
    pub tenant: String,
}

impl Account {
    pub fn credentials(&self) -> Credentials {
        Credentials {
            access_key_id: self.access_key_id.clone(),
            secret_access_key: self.secret_access_key.clone(),
        }
    }
}

/// Accounts indexed by access key id.
#[derive(Clone, Debug, Default)]
pub struct AccountList {
    accounts: Vec<Account>,
    by_key: HashMap<String, usize>,
}

impl AccountList {
    pub fn new(accounts: Vec<Account>) -> Result<Self> {
        let mut by_key = HashMap::new();
        for (i, a) in accounts.iter().enumerate() {
            if by_key.insert(a.access_key_id.clone(), i).is_some() {
                return Err(Error::Config(format!(
                    "duplicate access key id {:?} in accounts list",
                    a.access_key_id
                )));
            }
        }
        Ok(Self { accounts, by_key })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)
            .map_err(|e| Error::Config(format!("accounts file {}: {e}", path.display())))?;
        let accounts: Vec<Account> = serde_json::from_slice(&raw)
            .map_err(|e| Error::Config(format!("accounts file {}: {e}", path.display())))?;
        Self::new(accounts)
    }

    pub fn by_access_key(&self, id: &str) -> Option<&Account> {
        self.by_key.get(id).map(|&i| &self.accounts[i])
    }

    /// The account whose secret equals `secret`. Every account is compared
    /// in full so timing does not reveal which one matched.
    pub fn by_secret(&self, secret: &str) -> Option<&Account> {
        let mut found = None;
        for a in &self.accounts {
            if constant_time_eq(a.secret_access_key.as_bytes(), secret.as_bytes()) {
                found = Some(a);
            }
        }
        found
    }

    pub fn accounts(&self) -> &[Account] {
        &self.accounts
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// An accounts list backed by a file, reloaded when the file changes.
#[derive(Debug)]
pub struct AccountStore {
    path: Option<PathBuf>,
    current: RwLock<(Option<SystemTime>, Arc<AccountList>)>,
}

impl AccountStore {
    pub fn fixed(list: AccountList) -> Self {
        Self {
            path: None,
            current: RwLock::new((None, Arc::new(list))),
        }
    }

    /// Loads `path`. A missing file yields an empty list that is picked up
    /// once the file appears.
    pub fn from_file(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let (mtime, list) = match std::fs::metadata(&path) {
            Ok(m) => (m.modified().ok(), AccountList::load(&path)?),
            Err(_) => (None, AccountList::default()),
        };
        Ok(Self {
            path: Some(path),
            current: RwLock::new((mtime, Arc::new(list))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn current(&self) -> Arc<AccountList> {
        if let Some(path) = &self.path {
            let mtime = std::fs::metadata(path).and_then(|m| m.modified()).ok();
            if mtime != self.current.read().0 {
                match AccountList::load(path) {
                    Ok(list) => *self.current.write() = (mtime, Arc::new(list)),
                    Err(e) => tracing::warn!("keeping previous accounts: {e}"),
                }
            }
        }
        self.current.read().1.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthMode {
    None,
    Accounts,
    Aws4,
}

impl std::str::FromStr for AuthMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(AuthMode::None),
            "accounts" => Ok(AuthMode::Accounts),
            "aws4" => Ok(AuthMode::Aws4),
            _ => Err(format!("unknown authenticator {s:?}")),
        }
    }
}

impl AuthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthMode::None => "none",
            AuthMode::Accounts => "accounts",
            AuthMode::Aws4 => "aws4",
        }
    }
}

/// Why a request was rejected. Every variant maps to HTTP 403.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("missing credentials")]
    Missing,
    #[error("malformed authorization: {0}")]
    Malformed(String),
    #[error("unknown access key")]
    UnknownKey,
    #[error("signature does not match")]
    SignatureMismatch,
    #[error("payload hash does not match the body")]
    PayloadMismatch,
    #[error("request time is outside the allowed clock skew")]
    Stale,
}

impl AuthError {
    pub fn status(&self) -> u16 {
        403
    }
}

pub struct Authenticator {
    pub mode: AuthMode,
    accounts: AccountStore,
    /// Allowed clock skew for SigV4.
    pub skew: chrono::Duration,
}

impl std::fmt::Debug for Authenticator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Authenticator").field("mode", &self.mode).finish()
    }
}

impl Authenticator {
    pub fn new(mode: AuthMode, accounts: AccountStore) -> Self {
        Self {
            mode,
            accounts,
            skew: chrono::Duration::minutes(15),
        }
    }

    pub fn none() -> Self {
        Self::new(AuthMode::None, AccountStore::fixed(AccountList::default()))
    }

    pub fn accounts(&self) -> Arc<AccountList> {
        self.accounts.current()
    }

    pub fn accounts_path(&self) -> Option<&Path> {
        self.accounts.path()
    }

    /// The tenant a request acts for.
    pub fn authenticate(&self, req: &SignableRequest<'_>) -> std::result::Result<String, AuthError> {
        match self.mode {
            AuthMode::None => Ok(DEFAULT_TENANT.to_string()),
            AuthMode::Accounts => {
                let key = req.header(AUTH_KEY_HEADER).ok_or(AuthError::Missing)?;
                self.accounts
                    .current()
                    .by_secret(key.trim())
                    .map(|a| a.tenant.clone())
                    .ok_or(AuthError::UnknownKey)
            }
            AuthMode::Aws4 => {
                sigv4::verify_request(req, &self.accounts.current(), self.skew, Utc::now())
            }
        }
    }
}

/// How this host authenticates its own outgoing invocations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientAuth {
    None,
    SharedKey(String),
    Aws4 {
        credentials: Credentials,
        region: String,
    },
}

impl ClientAuth {
    /// Credentials matching an authenticator mode: `AWS_ACCESS_KEY_ID` and
    /// `AWS_SECRET_ACCESS_KEY` when set, otherwise the first listed account.
    pub fn for_mode(mode: AuthMode, accounts: &AccountList) -> Self {
        let from_env = || {
            let id = std::env::var("AWS_ACCESS_KEY_ID").ok()?;
            let secret = std::env::var("AWS_SECRET_ACCESS_KEY").ok()?;
            Some(Credentials {
                access_key_id: id,
                secret_access_key: secret,
            })
        };
        let creds = from_env().or_else(|| accounts.accounts().first().map(Account::credentials));
        match (mode, creds) {
            (AuthMode::None, _) | (_, None) => ClientAuth::None,
            (AuthMode::Accounts, Some(c)) => ClientAuth::SharedKey(c.secret_access_key),
            (AuthMode::Aws4, Some(c)) => ClientAuth::Aws4 {
                credentials: c,
                region: std::env::var("AWS_DEFAULT_REGION").unwrap_or_else(|_| "us-east-1".into()),
            },
        }
    }

    /// Headers to add to an outgoing request. `headers` must already hold
    /// `Host` and every other header that will be sent.
    pub fn headers_for(
        &self,
        method: &str,
        target: &str,
        headers: &[(String, String)],
        body: &[u8],
    ) -> Vec<(String, String)> {
        match self {
            ClientAuth::None => Vec::new(),
            ClientAuth::SharedKey(k) => vec![(AUTH_KEY_HEADER.to_string(), k.clone())],
            ClientAuth::Aws4 {
                credentials,
                region,
            } => {
                let req = SignableRequest {
                    method,
                    target,
                    headers,
                    body,
                };
                let params = sigv4::SigningParams::new(credentials, region, "lambda");
                sigv4::sign(&req, &params)
                    .map(|o| o.headers)
                    .unwrap_or_default()
            }
        }
    }
}
