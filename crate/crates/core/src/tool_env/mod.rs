//! Executable API surface behind one [`Executor`] contract: an in-process
//! simulated environment and a live REST executor.

mod rest;
mod sim;

pub use rest::{RestConfig, RestExecutor, RestRoute};
pub use sim::{
    missing_arguments_message, ManifestFunction, ManifestParam, ManifestRow, SimEnvironment, SimFunction,
    SimManifest, SimParam,
};

use serde::de::Deserializer;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ToolEnvError {
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("function '{0}' is already registered")]
    DuplicateName(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
}

/// An executable call: function id plus named arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub api_name: String,
    #[serde(default)]
    pub input: Map<String, Value>,
}

impl ApiCall {
    pub fn new(api_name: impl Into<String>, input: Map<String, Value>) -> Self {
        Self { api_name: api_name.into(), input }
    }
}

/// Execution envelope `{"error": "", "response": ...}`.
///
/// `error` is empty exactly when the call succeeded. Readers also accept the
/// bare-value and JSON-string shapes found in some datasets; writers always
/// emit the envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiOutput {
    pub error: String,
    pub response: Value,
    /// Set when a REST body was not JSON and `response` holds the raw text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub non_json: bool,
}

impl ApiOutput {
    pub fn ok(response: Value) -> Self {
        Self { error: String::new(), response, non_json: false }
    }

    pub fn err(message: impl Into<String>) -> Self {
        let message = message.into();
        debug_assert!(!message.is_empty());
        Self { error: message, response: Value::Null, non_json: false }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }

    /// Interprets any JSON value as an output, unwrapping envelopes and
    /// JSON-encoded strings.
    pub fn from_value(value: Value) -> Self {
        match value {
            Value::Object(map) if is_envelope(&map) => {
                let error = match map.get("error") {
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Null) | None => String::new(),
                    Some(other) => other.to_string(),
                };
                let non_json = map.get("non_json").and_then(Value::as_bool).unwrap_or(false);
                let response = map.get("response").cloned().unwrap_or(Value::Null);
                Self { error, response, non_json }
            }
            Value::String(s) => match serde_json::from_str::<Value>(&s) {
                Ok(inner @ (Value::Object(_) | Value::Array(_))) => Self::from_value(inner),
                _ => Self::ok(Value::String(s)),
            },
            other => Self::ok(other),
        }
    }
}

fn is_envelope(map: &Map<String, Value>) -> bool {
    map.contains_key("error")
        && map.keys().all(|k| matches!(k.as_str(), "error" | "response" | "non_json"))
        && (map.contains_key("response") || map.len() == 1)
}

impl<'de> Deserialize<'de> for ApiOutput {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Value::deserialize(deserializer).map(ApiOutput::from_value)
    }
}

pub trait Executor: Send + Sync {
    /// In-band API failures come back as an envelope with a non-empty
    /// `error`; only calls to functions outside the environment are `Err`.
    fn execute(&self, call: &ApiCall) -> Result<ApiOutput, ToolEnvError>;

    fn knows(&self, api_name: &str) -> bool;
}

impl<E: Executor + ?Sized> Executor for std::sync::Arc<E> {
    fn execute(&self, call: &ApiCall) -> Result<ApiOutput, ToolEnvError> {
        (**self).execute(call)
    }

    fn knows(&self, api_name: &str) -> bool {
        (**self).knows(api_name)
    }
}
