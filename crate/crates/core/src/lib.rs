//! A modular function-as-a-service host.
//!
//! Functions are deployed into a [`registry::Registry`], executed in-process
//! or in external worker processes by the [`host::Host`], and exposed through
//! a Lambda-compatible HTTP [`control`] plane. Triggers, authenticators,
//! loggers and forwarders are independent subsystems that plug into the host.

pub mod auth;
pub mod bench;
pub mod cli;
pub mod control;
pub mod error;
pub mod execution;
pub mod host;
pub mod http;
pub mod observability;
pub mod registry;
pub mod samples;
pub mod triggers;
pub mod worker;

pub use error::{Error, Result};
pub use execution::{
    ExecutorConfig, InvocationContext, InvocationResult, InvocationStatus, RuntimeKind,
};
pub use host::Host;
pub use registry::{FunctionConfig, FunctionSource, FunctionUnit, Registry};

/// Environment variable naming the functions directory.
pub const ENV_FUNCTIONS_DIR: &str = "SNAFU_FUNCTIONS_DIR";
/// Environment variable naming the accounts file.
pub const ENV_ACCOUNTS_FILE: &str = "SNAFU_ACCOUNTS_FILE";
/// Environment variable holding the control plane port.
pub const ENV_PORT: &str = "SNAFU_PORT";
/// Environment variable naming the worker executable for external executors.
pub const ENV_WORKER: &str = "SNAFU_WORKER";
