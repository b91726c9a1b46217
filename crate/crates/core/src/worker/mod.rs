//! External executors: worker processes speaking newline-delimited JSON
//! over their standard streams, either persistent (shared) or one per call
//! (non-shared).
//!
//! A worker is started as `<worker-executable> <source-file>`.

mod process;
pub mod protocol;
pub mod stub;

pub use process::{
    CallError, CallbackHandler, SharedWorker, WorkerCommand, WorkerPool, WorkerProcess,
};
pub use protocol::{
    decode_request, decode_response, encode_request, encode_response, EnumerateReply,
    ProtocolError, WorkerRequest, WorkerResponse, WorkerStatus,
};
