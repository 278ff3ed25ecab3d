//! Line-delimited JSON wire format spoken with execution workers.
//!
//! Every request is one line `{"id", "op", "args"}` and every response one line
//! `{"id", "ok", "result"}` or `{"id", "ok": false, "error"}`. Before any request
//! the orchestrator sends the worker its limits as a single JSON line.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ErrorClass, ExecError, PlanRollout};
use crate::model::{SpaceValue, StepOutput};

pub const PROTOCOL_VERSION: u32 = 1;

/// First line written to a freshly spawned worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartupLimits {
    pub cpu_seconds_per_call: f64,
    pub memory_cap_mb: u64,
    pub wall_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartupLine {
    pub limits: StartupLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAction {
    pub s: SpaceValue,
    pub a: SpaceValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Call {
    Handshake {
        version: u32,
    },
    Load {
        source: String,
    },
    PredictBatch {
        items: Vec<StateAction>,
    },
    StepFrom {
        s: SpaceValue,
        a: SpaceValue,
    },
    RunPlan {
        s0: SpaceValue,
        actions: Vec<SpaceValue>,
    },
    RunIo {
        source: String,
        cases: Vec<String>,
        timeout: f64,
    },
    Shutdown {},
}

impl Call {
    pub fn op(&self) -> &'static str {
        match self {
            Call::Handshake { .. } => "handshake",
            Call::Load { .. } => "load",
            Call::PredictBatch { .. } => "predict_batch",
            Call::StepFrom { .. } => "step_from",
            Call::RunPlan { .. } => "run_plan",
            Call::RunIo { .. } => "run_io",
            Call::Shutdown {} => "shutdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub call: Call,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ExecError>,
}

impl Response {
    pub fn success(id: u64, result: Value) -> Self {
        Self {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(id: u64, error: ExecError) -> Self {
        Self {
            id,
            ok: false,
            result: None,
            error: Some(error),
        }
    }

    /// Converts into the result payload or the carried error. A response that
    /// claims failure without an error object is itself a protocol error.
    pub fn into_result(self) -> Result<Value, ExecError> {
        if self.ok {
            Ok(self.result.unwrap_or(Value::Null))
        } else {
            Err(self.error.unwrap_or_else(|| {
                ExecError::new(ErrorClass::Protocol, "error response without error object")
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeResult {
    pub version: u32,
}

/// One entry of a `predict_batch` or `run_io` result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireItem<T> {
    Ok(T),
    Err { error: ExecError },
}

impl<T> From<Result<T, ExecError>> for WireItem<T> {
    fn from(r: Result<T, ExecError>) -> Self {
        match r {
            Ok(v) => WireItem::Ok(v),
            Err(error) => WireItem::Err { error },
        }
    }
}

impl<T> From<WireItem<T>> for Result<T, ExecError> {
    fn from(w: WireItem<T>) -> Self {
        match w {
            WireItem::Ok(v) => Ok(v),
            WireItem::Err { error } => Err(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictBatchResult {
    pub results: Vec<WireItem<StepOutput>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoOutput {
    pub stdout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIoResult {
    pub outputs: Vec<WireItem<IoOutput>>,
}

pub type RunPlanResult = PlanRollout;

pub fn encode_line<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("protocol messages always serialize");
    line.push('\n');
    line
}

pub fn decode_request(line: &str) -> Result<Request, ExecError> {
    serde_json::from_str(line.trim_end())
        .map_err(|e| ExecError::new(ErrorClass::Protocol, format!("malformed request: {e}")))
}

pub fn decode_response(line: &str) -> Result<Response, ExecError> {
    serde_json::from_str(line.trim_end())
        .map_err(|e| ExecError::new(ErrorClass::Protocol, format!("malformed response: {e}")))
}

/// Best-effort id recovery from a line that failed to decode as a request.
pub fn salvage_id(line: &str) -> u64 {
    serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(Value::as_u64))
        .unwrap_or(0)
}

pub fn parse_result<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, ExecError> {
    serde_json::from_value(value).map_err(|e| {
        ExecError::new(
            ErrorClass::Protocol,
            format!("unexpected result payload: {e}"),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_wire_shape() {
        let req = Request {
            id: 7,
            call: Call::StepFrom {
                s: SpaceValue::Discrete(2),
                a: SpaceValue::Discrete(1),
            },
        };
        let v: Value = serde_json::from_str(&encode_line(&req)).unwrap();
        assert_eq!(
            v,
            json!({"id": 7, "op": "step_from", "args": {"s": 2, "a": 1}})
        );
        assert_eq!(decode_request(&encode_line(&req)).unwrap(), req);

        let shutdown = Request {
            id: 1,
            call: Call::Shutdown {},
        };
        let v: Value = serde_json::to_value(&shutdown).unwrap();
        assert_eq!(v, json!({"id": 1, "op": "shutdown", "args": {}}));
    }

    #[test]
    fn response_wire_shape() {
        let ok = Response::success(3, json!({"version": 1}));
        let v: Value = serde_json::to_value(&ok).unwrap();
        assert_eq!(v, json!({"id": 3, "ok": true, "result": {"version": 1}}));

        let err = Response::failure(
            4,
            ExecError::new(ErrorClass::Syntax, "invalid syntax (line 1)"),
        );
        let v: Value = serde_json::to_value(&err).unwrap();
        assert_eq!(
            v,
            json!({"id": 4, "ok": false, "error": {"class": "syntax", "message": "invalid syntax (line 1)", "trace": ""}})
        );
    }

    #[test]
    fn batch_items_distinguish_errors() {
        let res = PredictBatchResult {
            results: vec![
                Ok(StepOutput::new(3, 0.0, false)).into(),
                Err(ExecError::runtime("division by zero")).into(),
            ],
        };
        let text = encode_line(&res);
        let back: PredictBatchResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, res);
        assert!(matches!(back.results[1], WireItem::Err { .. }));
    }

    #[test]
    fn malformed_lines_are_protocol_errors() {
        let e = decode_request("{not json").unwrap_err();
        assert_eq!(e.class, ErrorClass::Protocol);
        let e = decode_request(r#"{"id": 1, "op": "teleport", "args": {}}"#).unwrap_err();
        assert_eq!(e.class, ErrorClass::Protocol);
        assert_eq!(salvage_id(r#"{"id": 9, "op": "teleport"}"#), 9);
        assert_eq!(salvage_id("garbage"), 0);
    }
}
