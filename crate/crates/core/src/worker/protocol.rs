//! Newline-delimited JSON between the host and worker processes.
//!
//! Host to worker:
//!
//! ```text
//! {"id":"1","handler":"hello.helloworld","event":{},"context":{...}}
//! {"op":"enumerate","id":"e1"}
//! {"id":"cb-1","status":"ok","result":3,"duration_ms":0.2}     reply to a callback
//! ```
//!
//! Worker to host:
//!
//! ```text
//! {"id":"1","status":"ok","result":"Hello, World!","duration_ms":0.01}
//! {"id":"e1","functions":["fib","fib_delay"],"params":{"fib":["n","context"]}}
//! {"op":"invoke","id":"cb-1","parent":"1","function":"fib","event":{"n":2}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::execution::{InvocationContext, InvocationResult, InvocationStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub id: String,
    pub handler: String,
    pub event: Value,
    pub context: InvocationContext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerStatus {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub id: String,
    pub status: WorkerStatus,
    #[serde(
        default,
        deserialize_with = "present",
        skip_serializing_if = "Option::is_none"
    )]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub duration_ms: f64,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl WorkerResponse {
    pub fn ok(id: impl Into<String>, result: Value, duration_ms: f64) -> Self {
        Self {
            id: id.into(),
            status: WorkerStatus::Ok,
            result: Some(result),
            message: None,
            duration_ms,
        }
    }

    pub fn error(id: impl Into<String>, message: impl Into<String>, duration_ms: f64) -> Self {
        Self {
            id: id.into(),
            status: WorkerStatus::Error,
            result: None,
            message: Some(message.into()),
            duration_ms,
        }
    }

    pub fn from_result(id: impl Into<String>, r: &InvocationResult) -> Self {
        match r.status {
            InvocationStatus::Ok => Self::ok(id, r.value.clone().unwrap_or(Value::Null), r.duration_ms),
            _ => Self::error(id, r.message(), r.duration_ms),
        }
    }

    pub fn into_invocation_result(self) -> InvocationResult {
        match self.status {
            WorkerStatus::Ok => {
                InvocationResult::ok(self.result.unwrap_or(Value::Null), self.duration_ms)
            }
            WorkerStatus::Error => {
                let msg = self.message.filter(|m| !m.is_empty());
                InvocationResult::function_error(
                    msg.unwrap_or_else(|| "worker reported an error".into()),
                    self.duration_ms,
                )
            }
        }
    }

    /// Exactly one of `result` and `message` is present.
    pub fn is_well_formed(&self) -> bool {
        match self.status {
            WorkerStatus::Ok => self.result.is_some() && self.message.is_none(),
            WorkerStatus::Error => self.result.is_none() && self.message.is_some(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerateReply {
    pub id: String,
    pub functions: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Vec<String>>,
}

/// A function running in a worker asking the host to invoke another one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallbackRequest {
    pub id: String,
    /// Id of the request on whose behalf the call is made.
    pub parent: String,
    pub function: String,
    pub event: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HostMessage {
    Request(WorkerRequest),
    Enumerate { id: String },
    CallbackReply(WorkerResponse),
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorkerMessage {
    Response(WorkerResponse),
    Enumerated(EnumerateReply),
    Callback(CallbackRequest),
}

#[derive(Debug, thiserror::Error)]
#[error("protocol error: {0}")]
pub struct ProtocolError(pub String);

impl From<serde_json::Error> for ProtocolError {
    fn from(e: serde_json::Error) -> Self {
        ProtocolError(e.to_string())
    }
}

fn line<T: Serialize>(value: &T) -> Result<Vec<u8>, ProtocolError> {
    // serde_json escapes control characters, so the output has no raw newline
    let mut out = serde_json::to_vec(value)?;
    out.push(b'\n');
    Ok(out)
}

fn with_op<T: Serialize>(op: &str, value: &T) -> Result<Vec<u8>, ProtocolError> {
    let mut v = serde_json::to_value(value)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| ProtocolError("message must be an object".into()))?;
    let mut tagged = serde_json::Map::with_capacity(obj.len() + 1);
    tagged.insert("op".into(), Value::String(op.into()));
    tagged.append(obj);
    line(&tagged)
}

pub fn encode_request(req: &WorkerRequest) -> Result<Vec<u8>, ProtocolError> {
    line(req)
}

pub fn encode_response(resp: &WorkerResponse) -> Result<Vec<u8>, ProtocolError> {
    line(resp)
}

pub fn encode_host_message(msg: &HostMessage) -> Result<Vec<u8>, ProtocolError> {
    match msg {
        HostMessage::Request(r) => line(r),
        HostMessage::Enumerate { id } => line(&serde_json::json!({"op": "enumerate", "id": id})),
        HostMessage::CallbackReply(r) => line(r),
    }
}

pub fn encode_worker_message(msg: &WorkerMessage) -> Result<Vec<u8>, ProtocolError> {
    match msg {
        WorkerMessage::Response(r) => line(r),
        WorkerMessage::Enumerated(e) => line(e),
        WorkerMessage::Callback(c) => with_op("invoke", c),
    }
}

fn parse_object(bytes: &[u8]) -> Result<serde_json::Map<String, Value>, ProtocolError> {
    match serde_json::from_slice::<Value>(bytes)? {
        Value::Object(m) => Ok(m),
        _ => Err(ProtocolError("message must be a JSON object".into())),
    }
}

fn op_of(obj: &mut serde_json::Map<String, Value>) -> Option<String> {
    match obj.remove("op") {
        Some(Value::String(s)) => Some(s),
        _ => None,
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<WorkerRequest, ProtocolError> {
    Ok(serde_json::from_slice(bytes)?)
}

pub fn decode_response(bytes: &[u8]) -> Result<WorkerResponse, ProtocolError> {
    let r: WorkerResponse = serde_json::from_slice(bytes)?;
    if !r.is_well_formed() {
        return Err(ProtocolError(
            "response must carry exactly one of result and message".into(),
        ));
    }
    Ok(r)
}

pub fn decode_host_message(bytes: &[u8]) -> Result<HostMessage, ProtocolError> {
    let mut obj = parse_object(bytes)?;
    match op_of(&mut obj).as_deref() {
        Some("enumerate") => {
            let id = obj
                .get("id")
                .and_then(Value::as_str)
                .unwrap_or("unknown")
                .to_string();
            Ok(HostMessage::Enumerate { id })
        }
        Some(other) => Err(ProtocolError(format!("unknown op {other:?}"))),
        None if obj.contains_key("handler") => {
            Ok(HostMessage::Request(serde_json::from_value(Value::Object(obj))?))
        }
        None => Ok(HostMessage::CallbackReply(serde_json::from_value(
            Value::Object(obj),
        )?)),
    }
}

pub fn decode_worker_message(bytes: &[u8]) -> Result<WorkerMessage, ProtocolError> {
    let mut obj = parse_object(bytes)?;
    match op_of(&mut obj).as_deref() {
        Some("invoke") => Ok(WorkerMessage::Callback(serde_json::from_value(
            Value::Object(obj),
        )?)),
        Some(other) => Err(ProtocolError(format!("unknown op {other:?}"))),
        None if obj.contains_key("functions") => Ok(WorkerMessage::Enumerated(
            serde_json::from_value(Value::Object(obj))?,
        )),
        None => {
            let r: WorkerResponse = serde_json::from_value(Value::Object(obj))?;
            if !r.is_well_formed() {
                return Err(ProtocolError(
                    "response must carry exactly one of result and message".into(),
                ));
            }
            Ok(WorkerMessage::Response(r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn ctx() -> InvocationContext {
        InvocationContext {
            request_id: "r".into(),
            function_name: "hello".into(),
            tenant: "default".into(),
            remaining_time_ms: 1000,
            invoke_endpoint: "local".into(),
            depth: 0,
        }
    }

    #[test]
    fn request_line_shape() {
        let req = WorkerRequest {
            id: "1".into(),
            handler: "hello.helloworld".into(),
            event: json!({}),
            context: ctx(),
        };
        let bytes = encode_request(&req).unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.starts_with(r#"{"id":"1","handler":"hello.helloworld","event":{},"context":{"#));
        assert!(text.ends_with("}\n"));
        assert_eq!(text.matches('\n').count(), 1);
    }

    #[test]
    fn newlines_in_strings_are_escaped() {
        let req = WorkerRequest {
            id: "1".into(),
            handler: "a.b".into(),
            event: json!({"s": "line1\nline2\r\n"}),
            context: ctx(),
        };
        let bytes = encode_request(&req).unwrap();
        assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 1);
        assert_eq!(decode_request(&bytes).unwrap(), req);
    }

    #[test]
    fn response_key_order() {
        let text = String::from_utf8(encode_response(&WorkerResponse::ok("7", json!(13), 0.5)).unwrap()).unwrap();
        assert_eq!(text, "{\"id\":\"7\",\"status\":\"ok\",\"result\":13,\"duration_ms\":0.5}\n");
        let text = String::from_utf8(encode_response(&WorkerResponse::error("7", "boom", 0.0)).unwrap()).unwrap();
        assert_eq!(text, "{\"id\":\"7\",\"status\":\"error\",\"message\":\"boom\",\"duration_ms\":0.0}\n");
    }

    #[test]
    fn malformed_responses_are_rejected() {
        assert!(decode_response(br#"{"id":"1","status":"ok","duration_ms":1}"#).is_err());
        assert!(decode_response(br#"{"id":"1","status":"error","result":1,"message":"x","duration_ms":1}"#).is_err());
        assert!(decode_response(br#"{"id":"1","status":"ok","result":null,"duration_ms":1}"#).is_ok());
        assert!(decode_worker_message(b"[1]").is_err());
        assert!(decode_host_message(br#"{"op":"dance"}"#).is_err());
    }

    #[test]
    fn message_discrimination() {
        let cb = CallbackRequest {
            id: "cb-1".into(),
            parent: "1".into(),
            function: "fib".into(),
            event: json!({"n": 2}),
        };
        let bytes = encode_worker_message(&WorkerMessage::Callback(cb.clone())).unwrap();
        assert!(std::str::from_utf8(&bytes).unwrap().contains(r#""op":"invoke""#));
        assert_eq!(decode_worker_message(&bytes).unwrap(), WorkerMessage::Callback(cb));

        let e = EnumerateReply {
            id: "e".into(),
            functions: vec!["fib".into()],
            params: BTreeMap::new(),
        };
        let bytes = encode_worker_message(&WorkerMessage::Enumerated(e.clone())).unwrap();
        assert_eq!(decode_worker_message(&bytes).unwrap(), WorkerMessage::Enumerated(e));

        let bytes = encode_host_message(&HostMessage::Enumerate { id: "e".into() }).unwrap();
        assert_eq!(bytes, b"{\"id\":\"e\",\"op\":\"enumerate\"}\n");
        assert_eq!(
            decode_host_message(&bytes).unwrap(),
            HostMessage::Enumerate { id: "e".into() }
        );
        let reply = WorkerResponse::ok("cb-1", json!(1), 0.0);
        let bytes = encode_host_message(&HostMessage::CallbackReply(reply.clone())).unwrap();
        assert_eq!(decode_host_message(&bytes).unwrap(), HostMessage::CallbackReply(reply));
    }

    fn json_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::from),
            any::<i64>().prop_map(Value::from),
            (-1_000_000i64..1_000_000).prop_map(|k| Value::from(k as f64 / 4.0)),
            ".*".prop_map(Value::from),
        ];
        leaf.prop_recursive(3, 24, 6, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
                prop::collection::btree_map(".*", inner, 0..6)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn request_round_trip(id in ".*", handler in "[a-z]+\\.[a-z_]+", event in json_value(),
                              depth in 0u32..4096, ep in prop_oneof![Just("local".to_string()), "http://[a-z]+:[0-9]{2,5}"]) {
            let mut context = ctx();
            context.depth = depth;
            context.invoke_endpoint = ep;
            let req = WorkerRequest { id, handler, event, context };
            let bytes = encode_request(&req).unwrap();
            prop_assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 1);
            prop_assert_eq!(decode_request(&bytes).unwrap(), req.clone());
            prop_assert_eq!(decode_host_message(&bytes).unwrap(), HostMessage::Request(req));
        }

        #[test]
        fn response_round_trip(id in ".*", ok in any::<bool>(), result in json_value(), message in ".*", d in 0u32..1_000_000) {
            let d = f64::from(d) / 8.0;
            let resp = if ok { WorkerResponse::ok(id, result, d) } else { WorkerResponse::error(id, message, d) };
            let bytes = encode_response(&resp).unwrap();
            prop_assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 1);
            prop_assert_eq!(decode_response(&bytes).unwrap(), resp.clone());
            prop_assert_eq!(decode_worker_message(&bytes).unwrap(), WorkerMessage::Response(resp));
        }
    }
}
