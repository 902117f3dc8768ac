//! JSONL schemas for synthesized samples, SFT records with argument-value
//! masks, and retriever training pairs.

use crate::synth::{Provenance, TaskSample};
use crate::tool_env::ApiOutput;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("cannot locate argument value: {0}")]
    Span(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub api_name: String,
    pub input: Map<String, Value>,
    pub output: ApiOutput,
    pub sub_instruction: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub query: String,
    pub api_path: Vec<PathStep>,
    pub final_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

const RECORD_KEYS: [&str; 4] = ["query", "api_path", "final_response", "provenance"];
const STEP_KEYS: [&str; 4] = ["api_name", "input", "output", "sub_instruction"];

impl SampleRecord {
    pub fn from_sample(sample: &TaskSample) -> Self {
        Self {
            query: sample.query.clone(),
            api_path: sample
                .units
                .iter()
                .map(|u| PathStep {
                    api_name: u.call.api_name.clone(),
                    input: u.call.input.clone(),
                    output: u.output.clone(),
                    sub_instruction: u.sub_query.clone(),
                    extra: Map::new(),
                })
                .collect(),
            final_response: sample.final_response.clone(),
            provenance: Some(sample.provenance.clone()),
            extra: Map::new(),
        }
    }

    pub fn gold_path(&self) -> Vec<String> {
        self.api_path.iter().map(|s| s.api_name.clone()).collect()
    }

    /// Reads one record. Lenient mode keeps unknown fields and accepts the
    /// `subinstruction` spelling; strict mode rejects both.
    pub fn from_value(value: Value, strict: bool) -> Result<Self, String> {
        let Value::Object(mut map) = value else { return Err("record must be a JSON object".into()) };
        for key in ["query", "api_path", "final_response"] {
            if !map.contains_key(key) {
                return Err(format!("missing field '{key}'"));
            }
        }
        if strict {
            if let Some(k) = map.keys().find(|k| !RECORD_KEYS.contains(&k.as_str())) {
                return Err(format!("unknown field '{k}'"));
            }
        }
        if let Some(Value::Array(steps)) = map.get_mut("api_path") {
            for (i, step) in steps.iter_mut().enumerate() {
                let Value::Object(step) = step else { return Err(format!("api_path[{i}] must be an object")) };
                if !step.contains_key("sub_instruction") {
                    if let Some(v) = step.remove("subinstruction").filter(|_| !strict) {
                        step.insert("sub_instruction".into(), v);
                    }
                }
                for key in STEP_KEYS {
                    if !step.contains_key(key) {
                        return Err(format!("api_path[{i}]: missing field '{key}'"));
                    }
                }
                if strict {
                    if let Some(k) = step.keys().find(|k| !STEP_KEYS.contains(&k.as_str())) {
                        return Err(format!("api_path[{i}]: unknown field '{k}'"));
                    }
                }
            }
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())
    }
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> std::io::Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    let raw = std::fs::read_to_string(path)?;
    parse_lines(&raw, |v| serde_json::from_value(v).map_err(|e| e.to_string()))
}

fn parse_lines<T>(raw: &str, read: impl Fn(Value) -> Result<T, String>) -> Result<Vec<T>, DatasetError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let schema = |message: String| DatasetError::Schema { line: i + 1, message };
            let value: Value = serde_json::from_str(l).map_err(|e| schema(e.to_string()))?;
            read(value).map_err(schema)
        })
        .collect()
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[SampleRecord]) -> std::io::Result<()> {
    write_jsonl(path, samples)
}

pub fn read_samples(path: impl AsRef<Path>, strict: bool) -> Result<Vec<SampleRecord>, DatasetError> {
    parse_samples(&std::fs::read_to_string(path)?, strict)
}

pub fn parse_samples(raw: &str, strict: bool) -> Result<Vec<SampleRecord>, DatasetError> {
    parse_lines(raw, |v| SampleRecord::from_value(v, strict))
}

/// Character range `[start, end)` in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub target: String,
    pub mask_spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedCall {
    pub api_name: String,
    pub input: Map<String, Value>,
}

/// Plan and calls recovered from an SFT target.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTarget {
    pub plan: Vec<String>,
    pub calls: Vec<PlannedCall>,
    pub final_response: String,
}

const FENCE_OPEN: &str = "```json\n";
const FENCE_CLOSE: &str = "\n```\n";

struct SpanWriter {
    text: String,
    chars: usize,
    spans: Vec<Span>,
}

impl SpanWriter {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn push_masked(&mut self, s: &str) {
        let start = self.chars;
        self.push(s);
        self.spans.push(Span(start, self.chars));
    }
}

fn json_text(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("json serializes")
}

/// Serializes `{"plan": [...], "calls": [...]}` in a fence, then the final
/// response. Every argument value is written through the masked path, so
/// spans are exact by construction.
pub fn render_target(calls: &[PlannedCall], final_response: &str) -> (String, Vec<Span>) {
    let mut w = SpanWriter { text: String::new(), chars: 0, spans: Vec::new() };
    w.push(FENCE_OPEN);
    w.push("{\"plan\": ");
    w.push(&json_text(&calls.iter().map(|c| c.api_name.as_str()).collect::<Vec<_>>()));
    w.push(", \"calls\": [");
    for (i, call) in calls.iter().enumerate() {
        if i > 0 {
            w.push(", ");
        }
        w.push("{\"api_name\": ");
        w.push(&json_text(&call.api_name));
        w.push(", \"input\": {");
        for (j, (k, v)) in call.input.iter().enumerate() {
            if j > 0 {
                w.push(", ");
            }
            w.push(&json_text(k));
            w.push(": ");
            w.push_masked(&json_text(v));
        }
        w.push("}}");
    }
    w.push("]}");
    w.push(FENCE_CLOSE);
    w.push(final_response);
    (w.text, w.spans)
}

pub fn parse_sft_target(target: &str) -> Result<ParsedTarget, DatasetError> {
    let bad = |m: &str| DatasetError::Schema { line: 0, message: m.to_string() };
    let body = target.strip_prefix(FENCE_OPEN).ok_or_else(|| bad("target does not open with a json fence"))?;
    let (json, rest) = body.split_once(FENCE_CLOSE).ok_or_else(|| bad("unterminated json fence"))?;
    #[derive(Deserialize)]
    struct Plan {
        plan: Vec<String>,
        calls: Vec<PlannedCall>,
    }
    let plan: Plan = serde_json::from_str(json).map_err(|e| bad(&e.to_string()))?;
    Ok(ParsedTarget { plan: plan.plan, calls: plan.calls, final_response: rest.to_string() })
}

/// Builds one SFT record per sample. `context` names the documents shown
/// in the prompt.
pub fn export_sft(
    samples: &[SampleRecord],
    docs: &std::collections::BTreeMap<String, crate::api_spec::ApiDocument>,
    context: impl Fn(&SampleRecord) -> Vec<String>,
) -> Result<Vec<SftRecord>, DatasetError> {
    samples
        .iter()
        .map(|s| {
            let mut prompt = format!("User Query: {}\n\nAPI Documents:\n", s.query);
            for id in context(s) {
                let doc = docs.get(&id).ok_or_else(|| DatasetError::Span(format!("no document for '{id}'")))?;
                prompt.push_str(&json_text(doc));
                prompt.push('\n');
            }
            let calls: Vec<PlannedCall> =
                s.api_path.iter().map(|p| PlannedCall { api_name: p.api_name.clone(), input: p.input.clone() }).collect();
            let (target, mask_spans) = render_target(&calls, &s.final_response);
            let expected: usize = calls.iter().map(|c| c.input.len()).sum();
            if mask_spans.len() != expected {
                return Err(DatasetError::Span(format!("{} of {expected} values located", mask_spans.len())));
            }
            Ok(SftRecord { prompt, target, mask_spans })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RetrieverPair {
    pub query: String,
    pub positive_doc_id: String,
}

/// One pair per gold-path function per sample, deduplicated on (query, doc).
pub fn export_retriever_pairs(samples: &[SampleRecord]) -> Vec<RetrieverPair> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in samples {
        for step in &s.api_path {
            let pair = RetrieverPair { query: s.query.clone(), positive_doc_id: step.api_name.clone() };
            if seen.insert(pair.clone()) {
                out.push(pair);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn record() -> SampleRecord {
        SampleRecord::from_value(
            json!({
                "query": "q",
                "api_path": [{"api_name": "f", "input": {"a": 1, "b": "1"}, "output": {"error": "", "response": 1}, "sub_instruction": "s"}],
                "final_response": "r"
            }),
            true,
        )
        .unwrap()
    }

    #[test]
    fn spelling_and_unknown_fields() {
        let lenient = json!({
            "query": "q",
            "api_path": [{"api_name": "f", "input": {}, "output": "{\"x\": 1}", "subinstruction": "s"}],
            "final_response": "r",
            "source": "apibank"
        });
        let r = SampleRecord::from_value(lenient.clone(), false).unwrap();
        assert_eq!(r.api_path[0].sub_instruction, "s");
        assert_eq!(r.api_path[0].output.response, json!({"x": 1}));
        assert_eq!(r.extra["source"], json!("apibank"));
        assert!(SampleRecord::from_value(lenient, true).is_err());
        let missing = json!({"query": "q", "api_path": []});
        assert!(SampleRecord::from_value(missing, false).unwrap_err().contains("final_response"));
    }

    #[test]
    fn missing_final_response_reports_its_line() {
        let raw = format!("{}\n{}\n", serde_json::to_string(&record()).unwrap(), r#"{"query": "q", "api_path": []}"#);
        assert!(matches!(parse_samples(&raw, false), Err(DatasetError::Schema { line: 2, .. })));
    }

    #[test]
    fn spans_cover_each_value_site() {
        let r = record();
        let sft = export_sft(&[r], &Default::default(), |_| vec![]).unwrap().remove(0);
        let chars: Vec<char> = sft.target.chars().collect();
        let covered: Vec<String> = sft.mask_spans.iter().map(|Span(a, b)| chars[*a..*b].iter().collect()).collect();
        assert_eq!(covered, vec!["1", "\"1\""]);
        let parsed = parse_sft_target(&sft.target).unwrap();
        assert_eq!(parsed.plan, vec!["f"]);
        assert_eq!(parsed.final_response, "r");
    }

    #[test]
    fn pairs_deduplicate() {
        let mut r = record();
        r.api_path.push(r.api_path[0].clone());
        assert_eq!(export_retriever_pairs(&[r]).len(), 1);
        assert!(export_retriever_pairs(&[]).is_empty());
    }
}
