use super::{sim::missing_arguments_message, ApiCall, ApiOutput, Executor, ToolEnvError};
use crate::json_util::scalar_text;
use crate::provider::http::{HttpRequest, Transport};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeSet;
use std::sync::{Arc, Condvar, Mutex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestConfig {
    pub base_url: String,
    /// Sent verbatim on every request, e.g. `("Authorization", "Bearer ...")`.
    #[serde(default)]
    pub auth_header: Option<(String, String)>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

/// `"GET /movie/{movie_id}/keywords"` split into method, path template and
/// the path variables in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestRoute {
    pub method: String,
    pub path: String,
    pub path_vars: Vec<String>,
}

impl RestRoute {
    pub fn parse(api_name: &str) -> Option<Self> {
        let (method, path) = api_name.trim().split_once(' ')?;
        let method = method.to_ascii_uppercase();
        if !matches!(method.as_str(), "GET" | "POST" | "PUT" | "PATCH" | "DELETE") || !path.starts_with('/') {
            return None;
        }
        let mut path_vars = Vec::new();
        let mut rest = path;
        while let Some(open) = rest.find('{') {
            let close = rest[open..].find('}')? + open;
            path_vars.push(rest[open + 1..close].to_string());
            rest = &rest[close + 1..];
        }
        Some(Self { method, path: path.trim().to_string(), path_vars })
    }

    fn has_body(&self) -> bool {
        matches!(self.method.as_str(), "POST" | "PUT" | "PATCH")
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock poisoned");
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight lock poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Executes RestBench-style `METHOD /path/{var}` calls against a live service.
pub struct RestExecutor {
    config: RestConfig,
    transport: Arc<dyn Transport>,
    known: Option<BTreeSet<String>>,
    in_flight: InFlight,
}

impl RestExecutor {
    pub fn new(config: RestConfig, transport: Arc<dyn Transport>) -> Self {
        let limit = config.max_in_flight.max(1);
        Self {
            config,
            transport,
            known: None,
            in_flight: InFlight { limit, active: Mutex::new(0), freed: Condvar::new() },
        }
    }

    /// Restricts execution to the listed api names.
    pub fn with_known(mut self, names: impl IntoIterator<Item = String>) -> Self {
        self.known = Some(names.into_iter().collect());
        self
    }

    /// Builds the HTTP request, or the in-band error for missing path variables.
    pub fn build_request(&self, route: &RestRoute, input: &Map<String, Value>) -> Result<HttpRequest, ApiOutput> {
        let missing: Vec<&str> =
            route.path_vars.iter().filter(|v| !input.contains_key(*v)).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(ApiOutput::err(missing_arguments_message(&missing)));
        }
        let mut path = route.path.clone();
        for var in &route.path_vars {
            let text = value_text(&input[var]);
            path = path.replace(&format!("{{{var}}}"), &percent_encode(&text));
        }
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), path);
        let mut req = HttpRequest::new(route.method.clone(), url);
        if let Some((name, value)) = &self.config.auth_header {
            req = req.header(name.clone(), value.clone());
        }
        let rest: Map<String, Value> =
            input.iter().filter(|(k, _)| !route.path_vars.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        if route.has_body() {
            req.body = Some(Value::Object(rest));
        } else {
            req.query = rest.iter().map(|(k, v)| (k.clone(), value_text(v))).collect();
        }
        Ok(req)
    }
}

fn value_text(v: &Value) -> String {
    scalar_text(v).unwrap_or_else(|| v.to_string())
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl Executor for RestExecutor {
    fn execute(&self, call: &ApiCall) -> Result<ApiOutput, ToolEnvError> {
        if !self.knows(&call.api_name) {
            return Err(ToolEnvError::UnknownFunction(call.api_name.clone()));
        }
        let route = RestRoute::parse(&call.api_name).expect("knows() checked the route");
        let request = match self.build_request(&route, &call.input) {
            Ok(r) => r,
            Err(envelope) => return Ok(envelope),
        };
        let _slot = self.in_flight.acquire();
        let response = match self.transport.send(&request) {
            Ok(r) => r,
            Err(e) => return Ok(ApiOutput::err(format!("transport error: {e}"))),
        };
        if !response.is_success() {
            return Ok(ApiOutput::err(format!("HTTP {}: {}", response.status, response.body)));
        }
        Ok(match serde_json::from_str::<Value>(&response.body) {
            Ok(v) => ApiOutput::ok(v),
            Err(_) => ApiOutput { error: String::new(), response: Value::String(response.body), non_json: true },
        })
    }

    fn knows(&self, api_name: &str) -> bool {
        RestRoute::parse(api_name).is_some() && self.known.as_ref().is_none_or(|k| k.contains(api_name))
    }
}
