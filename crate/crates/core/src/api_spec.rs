//! API documents and their parsed input/output descriptions.

use crate::prompts::{self, PromptId};
use crate::provider::{ChatProvider, ProviderError, Session};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiSpecError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("{name}: reply described {got} parameters, document declares {expected}")]
    ArityMismatch { name: String, expected: usize, got: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDoc {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

/// Raw documentation of one API function. Parameter order defines the
/// 0-based parameter index used by dependency edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiDocument {
    pub tool: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ParamDoc>,
    #[serde(default)]
    pub output_schema: Value,
}

impl ApiDocument {
    pub fn arity(&self) -> usize {
        self.parameters.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("documents serialize")
    }

    fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("function name must be non-empty".into());
        }
        let mut seen = HashSet::new();
        for p in &self.parameters {
            if !seen.insert(p.name.as_str()) {
                return Err(format!("{}: duplicate parameter name '{}'", self.name, p.name));
            }
        }
        Ok(())
    }

    fn output_text(&self) -> String {
        match &self.output_schema {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

/// `input_descriptions[k]` describes the k-th declared parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSpec {
    pub name: String,
    pub input_descriptions: Vec<String>,
    pub output_description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Always ask the model.
    #[default]
    Llm,
    /// Copy descriptions already present in the document.
    Direct,
    /// Direct when every description is present, otherwise the model.
    Auto,
}

/// Reads a JSONL corpus. Blank lines are skipped; line numbers are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ApiDocument>, ApiSpecError> {
    let raw = std::fs::read_to_string(path)?;
    parse_corpus_jsonl(&raw)
}

pub fn parse_corpus_jsonl(raw: &str) -> Result<Vec<ApiDocument>, ApiSpecError> {
    let mut docs: Vec<ApiDocument> = Vec::new();
    let mut keys = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc: ApiDocument = serde_json::from_str(line)
            .map_err(|e| ApiSpecError::Schema { line: line_no, message: e.to_string() })?;
        doc.validate().map_err(|message| ApiSpecError::Schema { line: line_no, message })?;
        if !keys.insert((doc.tool.clone(), doc.name.clone())) {
            return Err(ApiSpecError::Schema {
                line: line_no,
                message: format!("duplicate document ({}, {})", doc.tool, doc.name),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[ApiDocument]) -> std::io::Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

fn direct_spec(doc: &ApiDocument) -> Option<ParsedSpec> {
    let output = if doc.output_text().trim().is_empty() { doc.description.clone() } else { doc.output_text() };
    let complete = doc.parameters.iter().all(|p| !p.description.trim().is_empty()) && !output.trim().is_empty();
    complete.then(|| ParsedSpec {
        name: doc.name.clone(),
        input_descriptions: doc.parameters.iter().map(|p| p.description.clone()).collect(),
        output_description: output,
    })
}

fn description_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Object(m) => m
            .get("description")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| v.to_string()),
        other => other.to_string(),
    }
}

fn read_reply(doc: &ApiDocument, reply: &Value) -> Result<(Vec<String>, String), ApiSpecError> {
    let inputs = match reply.get("input_params") {
        Some(Value::Array(items)) => items.iter().map(description_text).collect(),
        Some(Value::Null) | None if doc.arity() == 0 => Vec::new(),
        _ => return Err(ProviderError::Format(format!("{}: reply lacks an input_params array", doc.name)).into()),
    };
    let output = reply.get("output").map(description_text).unwrap_or_default();
    if output.trim().is_empty() {
        return Err(ProviderError::Format(format!("{}: reply lacks an output description", doc.name)).into());
    }
    Ok((inputs, output))
}

pub fn parse_request(doc: &ApiDocument) -> crate::provider::ChatRequest {
    prompts::request(PromptId::ParseDocument, &json!({ "API Document": doc.to_json() }))
}

/// Extracts one description per declared parameter plus the output
/// description. An arity mismatch gets one corrective re-prompt.
pub fn parse_document(
    doc: &ApiDocument,
    session: &mut Session<'_>,
    mode: ParseMode,
) -> Result<ParsedSpec, ApiSpecError> {
    match mode {
        ParseMode::Direct | ParseMode::Auto => {
            if let Some(spec) = direct_spec(doc) {
                return Ok(spec);
            }
            if mode == ParseMode::Direct {
                return Err(ApiSpecError::Schema {
                    line: 0,
                    message: format!("{}: direct mode needs every parameter and the output described", doc.name),
                });
            }
        }
        ParseMode::Llm => {}
    }
    let request = parse_request(doc);
    let reply = session.chat_json(&request)?;
    let (inputs, output) = read_reply(doc, &reply)?;
    if inputs.len() == doc.arity() {
        return Ok(ParsedSpec { name: doc.name.clone(), input_descriptions: inputs, output_description: output });
    }
    let names: Vec<&str> = doc.parameters.iter().map(|p| p.name.as_str()).collect();
    let correction = format!(
        "The \"input_params\" array must contain exactly {} descriptions, one per parameter in this order: [{}]. Return the corrected dictionary only.",
        doc.arity(),
        names.join(", ")
    );
    let retry = request.with_user_turn_after(&prompts::render_payload(&reply), &correction);
    let reply = session.chat_json(&retry)?;
    let (inputs, output) = read_reply(doc, &reply)?;
    if inputs.len() != doc.arity() {
        return Err(ApiSpecError::ArityMismatch { name: doc.name.clone(), expected: doc.arity(), got: inputs.len() });
    }
    Ok(ParsedSpec { name: doc.name.clone(), input_descriptions: inputs, output_description: output })
}

/// Parses every document on a bounded pool; results keep corpus order.
pub fn parse_all(
    docs: &[ApiDocument],
    provider: &dyn ChatProvider,
    mode: ParseMode,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ParsedSpec>, ApiSpecError> {
    pool.install(|| {
        docs.par_iter()
            .map(|d| parse_document(d, &mut Session::new(provider), mode))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect()
}
