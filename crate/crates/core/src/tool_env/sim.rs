use super::{ApiCall, ApiOutput, Executor, ToolEnvError};
use crate::api_spec::{ApiDocument, ParamDoc};
use crate::json_util::json_eq;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParam {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub required: bool,
}

type Handler = dyn Fn(&Map<String, Value>) -> ApiOutput + Send + Sync;

/// A pure simulated API function.
#[derive(Clone)]
pub struct SimFunction {
    pub name: String,
    pub params: Vec<SimParam>,
    handler: Arc<Handler>,
}

impl fmt::Debug for SimFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimFunction").field("name", &self.name).field("params", &self.params).finish()
    }
}

impl SimFunction {
    /// `handler` only sees argument maps that passed the arity checks.
    pub fn new<F>(name: impl Into<String>, params: Vec<SimParam>, handler: F) -> Self
    where
        F: Fn(&Map<String, Value>) -> ApiOutput + Send + Sync + 'static,
    {
        Self { name: name.into(), params, handler: Arc::new(handler) }
    }

    /// Table-backed function: the first row whose every input matches wins.
    pub fn from_table(
        name: impl Into<String>,
        params: Vec<SimParam>,
        rows: Vec<ManifestRow>,
        default_response: Option<Value>,
    ) -> Self {
        let optional: Vec<String> = params.iter().filter(|p| !p.required).map(|p| p.name.clone()).collect();
        Self::new(name, params, move |input| {
            let hit = rows.iter().find(|row| {
                row.input.iter().all(|(k, v)| input.get(k).is_some_and(|got| json_eq(got, v)))
                    && input.keys().all(|k| row.input.contains_key(k) || optional.contains(k))
            });
            match (hit, &default_response) {
                (Some(row), _) => ApiOutput::ok(row.response.clone()),
                (None, Some(default)) => ApiOutput::ok(default.clone()),
                (None, None) => ApiOutput::err("no record matches the given arguments"),
            }
        })
    }

    fn call(&self, input: &Map<String, Value>) -> ApiOutput {
        if let Some(unexpected) = input.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return ApiOutput::err(format!("got an unexpected keyword argument '{unexpected}'"));
        }
        let missing: Vec<&str> = self
            .params
            .iter()
            .filter(|p| p.required && !input.contains_key(&p.name))
            .map(|p| p.name.as_str())
            .collect();
        if !missing.is_empty() {
            return ApiOutput::err(missing_arguments_message(&missing));
        }
        (self.handler)(input)
    }
}

/// Python-style arity message, e.g.
/// `missing 1 required positional argument: 'salary'`.
pub fn missing_arguments_message(names: &[&str]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| format!("'{n}'")).collect();
    let list = match quoted.len() {
        0 => String::new(),
        1 => quoted[0].clone(),
        2 => format!("{} and {}", quoted[0], quoted[1]),
        _ => format!("{}, and {}", quoted[..quoted.len() - 1].join(", "), quoted[quoted.len() - 1]),
    };
    let noun = if names.len() == 1 { "argument" } else { "arguments" };
    format!("missing {} required positional {noun}: {list}", names.len())
}

/// Deterministic in-process environment. Immutable once shared.
#[derive(Debug, Default, Clone)]
pub struct SimEnvironment {
    functions: BTreeMap<String, SimFunction>,
}

impl SimEnvironment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, function: SimFunction) -> Result<(), ToolEnvError> {
        if self.functions.contains_key(&function.name) {
            return Err(ToolEnvError::DuplicateName(function.name));
        }
        self.functions.insert(function.name.clone(), function);
        Ok(())
    }

    pub fn from_manifest(manifest: &SimManifest) -> Result<Self, ToolEnvError> {
        let mut env = Self::new();
        for f in &manifest.functions {
            env.register(f.to_sim_function())?;
        }
        Ok(env)
    }

    pub fn function_names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

impl Executor for SimEnvironment {
    fn execute(&self, call: &ApiCall) -> Result<ApiOutput, ToolEnvError> {
        self.functions
            .get(&call.api_name)
            .map(|f| f.call(&call.input))
            .ok_or_else(|| ToolEnvError::UnknownFunction(call.api_name.clone()))
    }

    fn knows(&self, api_name: &str) -> bool {
        self.functions.contains_key(api_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    #[serde(default)]
    pub input: Map<String, Value>,
    pub response: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestParam {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub required: bool,
    #[serde(default)]
    pub description: String,
    /// Output keys of other functions this parameter consumes. Read only by
    /// the offline stand-in model; never part of the API document.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFunction {
    pub tool: String,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ManifestParam>,
    #[serde(default)]
    pub output_schema: Value,
    #[serde(default)]
    pub rows: Vec<ManifestRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_response: Option<Value>,
    /// Sub-instruction template with `{param}` placeholders, read only by the
    /// offline stand-in model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl ManifestFunction {
    pub fn document(&self) -> ApiDocument {
        ApiDocument {
            tool: self.tool.clone(),
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: self
                .parameters
                .iter()
                .map(|p| ParamDoc {
                    name: p.name.clone(),
                    type_tag: p.type_tag.clone(),
                    required: p.required,
                    description: p.description.clone(),
                })
                .collect(),
            output_schema: self.output_schema.clone(),
        }
    }

    pub fn to_sim_function(&self) -> SimFunction {
        let params = self
            .parameters
            .iter()
            .map(|p| SimParam { name: p.name.clone(), type_tag: p.type_tag.clone(), required: p.required })
            .collect();
        SimFunction::from_table(self.name.clone(), params, self.rows.clone(), self.default_response.clone())
    }
}

/// JSON manifest: `{"functions": [{tool, name, description, parameters, output_schema, rows}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub functions: Vec<ManifestFunction>,
}

impl SimManifest {
    pub fn from_json(raw: &str) -> Result<Self, ToolEnvError> {
        let manifest: SimManifest = serde_json::from_str(raw).map_err(|e| ToolEnvError::Manifest(e.to_string()))?;
        for f in &manifest.functions {
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = f.parameters.iter().find(|p| !seen.insert(p.name.as_str())) {
                return Err(ToolEnvError::Manifest(format!("{}: duplicate parameter '{}'", f.name, dup.name)));
            }
        }
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ToolEnvError> {
        let raw = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ToolEnvError::Manifest(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&raw)
    }

    pub fn documents(&self) -> Vec<ApiDocument> {
        self.functions.iter().map(ManifestFunction::document).collect()
    }

    pub fn function(&self, name: &str) -> Option<&ManifestFunction> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn p(name: &str, required: bool) -> SimParam {
        SimParam { name: name.into(), type_tag: "string".into(), required }
    }

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn register_then_execute() {
        let mut env = SimEnvironment::new();
        env.register(SimFunction::new("echo", vec![p("x", true)], |i| ApiOutput::ok(i["x"].clone())))
            .unwrap();
        let out = env.execute(&ApiCall::new("echo", args(json!({"x": 3})))).unwrap();
        assert_eq!(out.response, json!(3));
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut env = SimEnvironment::new();
        let f = SimFunction::new("f", vec![], |_| ApiOutput::ok(json!({})));
        env.register(f.clone()).unwrap();
        assert_eq!(env.register(f), Err(ToolEnvError::DuplicateName("f".into())));
    }

    #[test]
    fn unregistered_name_is_unknown() {
        let env = SimEnvironment::new();
        assert_eq!(
            env.execute(&ApiCall::new("nope", Map::new())),
            Err(ToolEnvError::UnknownFunction("nope".into()))
        );
    }

    #[test]
    fn arity_failures_are_in_band() {
        let mut env = SimEnvironment::new();
        env.register(SimFunction::new("f", vec![p("a", true), p("b", true), p("c", false)], |_| {
            ApiOutput::ok(json!({}))
        }))
        .unwrap();
        let out = env.execute(&ApiCall::new("f", args(json!({"a": 1})))).unwrap();
        assert_eq!(out.error, "missing 1 required positional argument: 'b'");
        let out = env.execute(&ApiCall::new("f", Map::new())).unwrap();
        assert_eq!(out.error, "missing 2 required positional arguments: 'a' and 'b'");
        let out = env.execute(&ApiCall::new("f", args(json!({"a": 1, "b": 2, "z": 0})))).unwrap();
        assert_eq!(out.error, "got an unexpected keyword argument 'z'");
        assert_eq!(
            missing_arguments_message(&["a", "b", "c"]),
            "missing 3 required positional arguments: 'a', 'b', and 'c'"
        );
    }

    #[test]
    fn table_rows_match_numerically_and_ignore_optional_extras() {
        let f = SimFunction::from_table(
            "t",
            vec![p("n", true), p("opt", false)],
            vec![ManifestRow { input: args(json!({"n": 150000})), response: json!({"hit": true}) }],
            None,
        );
        assert_eq!(f.call(&args(json!({"n": 150000.0}))).response, json!({"hit": true}));
        assert_eq!(f.call(&args(json!({"n": 150000, "opt": "x"}))).response, json!({"hit": true}));
        assert!(!f.call(&args(json!({"n": 1}))).is_ok());
    }
}
