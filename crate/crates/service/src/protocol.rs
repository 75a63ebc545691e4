//! Wire format: one JSON request per line, one JSON response per line.
//!
//! ```text
//! > {"verb":"suggest","task_id":"etl-7","payload":{"context":{"data_size":1.2}}}
//! < {"status":"ok","payload":{"iteration":4,"configuration":{...},...},"engine_version":"0.1.0"}
//! < {"status":"error","payload":{"class":"not_found","message":"..."},"engine_version":"0.1.0"}
//! ```

use otune_core::engine::Measurement;
use otune_core::history::Context;
use otune_core::space::Configuration;
use otune_core::ENGINE_VERSION;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Result, ServiceError};
use crate::service::{CreateTask, Service};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub verb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default)]
    pub payload: Value,
}

impl Request {
    pub fn new(verb: &str, task_id: Option<&str>, payload: Value) -> Self {
        Request { verb: verb.into(), task_id: task_id.map(str::to_string), payload }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub status: Status,
    pub payload: Value,
    pub engine_version: String,
}

impl Response {
    pub fn ok(payload: Value) -> Self {
        Response { status: Status::Ok, payload, engine_version: ENGINE_VERSION.into() }
    }

    pub fn error(err: &ServiceError) -> Self {
        Response {
            status: Status::Error,
            payload: json!({ "class": err.class(), "message": err.to_string() }),
            engine_version: ENGINE_VERSION.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Error class of a failed response.
    pub fn class(&self) -> Option<&str> {
        match self.status {
            Status::Ok => None,
            Status::Error => self.payload.get("class").and_then(Value::as_str),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestBody {
    #[serde(default)]
    context: Context,
}

/// An observe payload: the measurement plus, for runs the service did not
/// suggest, the configuration that was executed.
#[derive(Deserialize)]
struct ObserveBody {
    #[serde(default)]
    imported: bool,
    #[serde(default)]
    configuration: Option<Configuration>,
    /// Iteration being reported, for safe retries.
    #[serde(default)]
    iteration: Option<u64>,
    #[serde(flatten)]
    measurement: Value,
}

fn body<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T> {
    let payload = if payload.is_null() { json!({}) } else { payload.clone() };
    serde_json::from_value(payload).map_err(|e| ServiceError::Invalid(format!("payload: {e}")))
}

fn task_id(req: &Request) -> Result<&str> {
    req.task_id.as_deref().ok_or_else(|| ServiceError::Invalid("task_id: required".into()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("responses serialize")
}

fn dispatch(service: &Service, req: &Request) -> Result<Value> {
    match req.verb.as_str() {
        "create-task" => {
            let create: CreateTask = body(&req.payload)?;
            if let Some(id) = &req.task_id {
                if *id != create.definition.task_id {
                    return Err(ServiceError::Invalid(format!(
                        "task_id: {id} does not match definition.task_id {}",
                        create.definition.task_id
                    )));
                }
            }
            let (id, status) = service.create_task(create)?;
            Ok(json!({ "task_id": id, "status": status }))
        }
        "suggest" => {
            let b: SuggestBody = body(&req.payload)?;
            Ok(to_value(&service.suggest(task_id(req)?, &b.context)?))
        }
        "observe" => {
            let mut b: ObserveBody = body(&req.payload)?;
            let fields = b.measurement.as_object_mut().expect("flattened fields form an object");
            let failed = fields.get("failed").and_then(Value::as_bool).unwrap_or(false);
            match fields.get("runtime") {
                Some(Value::Number(_)) => {}
                None | Some(Value::Null) if failed => {
                    fields.insert("runtime".into(), Value::Null);
                }
                _ => return Err(ServiceError::Invalid("runtime: a number is required unless failed is true".into())),
            }
            let m: Measurement =
                serde_json::from_value(b.measurement).map_err(|e| ServiceError::Invalid(format!("payload: {e}")))?;
            let imported = match (b.imported, b.configuration) {
                (true, Some(c)) => Some(c),
                (true, None) => return Err(ServiceError::Invalid("configuration: required for imported runs".into())),
                (false, Some(_)) => {
                    return Err(ServiceError::Invalid("configuration: only allowed with imported: true".into()))
                }
                (false, None) => None,
            };
            Ok(to_value(&service.observe(task_id(req)?, m, imported.as_ref(), b.iteration)?))
        }
        "best" => Ok(to_value(&service.best(task_id(req)?)?)),
        "status" => Ok(to_value(&service.status(task_id(req)?)?)),
        "export-history" => {
            let (spec, history) = service.export_history(task_id(req)?)?;
            Ok(json!({ "task": spec, "observations": history }))
        }
        "importance" => Ok(to_value(&service.importance(task_id(req)?)?)),
        other => Err(ServiceError::Invalid(format!("verb: unknown verb {other:?}"))),
    }
}

pub fn handle(service: &Service, req: &Request) -> Response {
    match dispatch(service, req) {
        Ok(v) => Response::ok(v),
        Err(e) => {
            log::debug!("{} {:?}: {e}", req.verb, req.task_id);
            Response::error(&e)
        }
    }
}

/// Handles one raw request line.
pub fn handle_line(service: &Service, line: &str) -> Response {
    match serde_json::from_str::<Request>(line) {
        Ok(req) => handle(service, &req),
        Err(e) => Response::error(&ServiceError::Invalid(format!("request: {e}"))),
    }
}
