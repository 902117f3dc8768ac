//! Call-first synthesis: execute every node of a task in order, describe
//! each call, then summarize the whole trajectory into a user query and a
//! final response.

use crate::api_spec::ApiDocument;
use crate::json_util::{object, value_contained};
use crate::prompts::{self, PromptId};
use crate::provider::{ChatProvider, ProviderError, PromptTrace, Session};
use crate::sampler::SubgraphTask;
use crate::tool_env::{ApiCall, ApiOutput, Executor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{node}: could not ground parameter '{param}' in the output of {source_fn}")]
    Extraction { node: String, param: String, source_fn: String },
    #[error("{node}: required parameter '{param}' is still missing")]
    MissingRequired { node: String, param: String },
    #[error("{node}: execution failed: {message}")]
    Execution { node: String, message: String },
    #[error("user query mentions function '{0}'")]
    Leak(String),
    #[error("reply lacks the '{0}' field")]
    MissingField(&'static str),
    #[error("a final response needs at least one call unit")]
    NoUnits,
    #[error("no document for '{0}'")]
    UnknownNode(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl SynthError {
    /// Errors that abort one sample rather than the whole run.
    fn is_sample_local(&self) -> bool {
        !matches!(
            self,
            SynthError::Provider(
                ProviderError::Transport(_) | ProviderError::ScriptMiss { .. } | ProviderError::CacheConflict(_) | ProviderError::Io(_)
            ) | SynthError::UnknownNode(_)
        )
    }

    fn cause(&self) -> AbortCause {
        match self {
            SynthError::Extraction { .. } => AbortCause::Extraction,
            SynthError::MissingRequired { .. } => AbortCause::MissingRequired,
            SynthError::Execution { .. } => AbortCause::Execution,
            SynthError::Leak(_) => AbortCause::Leak,
            _ => AbortCause::Format,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallUnit {
    pub sub_query: String,
    pub call: ApiCall,
    pub output: ApiOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Every prompt issued for the sample, in issue order.
    pub traces: Vec<PromptTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub query: String,
    pub units: Vec<CallUnit>,
    pub final_response: String,
    pub gold_path: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortCause {
    Extraction,
    MissingRequired,
    Execution,
    Leak,
    Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthOutcome {
    Sample(TaskSample),
    Aborted { node: Option<String>, cause: AbortCause, message: String },
}

pub struct SynthContext<'a> {
    pub docs: &'a BTreeMap<String, ApiDocument>,
    pub env: &'a dyn Executor,
    pub provider: &'a dyn ChatProvider,
    /// Extra attempts per aborted task.
    pub retries: usize,
}

impl SynthContext<'_> {
    fn doc(&self, name: &str) -> Result<&ApiDocument, SynthError> {
        self.docs.get(name).ok_or_else(|| SynthError::UnknownNode(name.to_string()))
    }
}

fn reply_object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn declared_only(doc: &ApiDocument, args: Map<String, Value>) -> Map<String, Value> {
    args.into_iter().filter(|(k, v)| doc.param_index(k).is_some() && !v.is_null()).collect()
}

/// Builds the call for `node`: parameters with an incoming edge are read
/// off the latest executed source's output, the rest are filled from the
/// document.
pub fn fill_arguments(
    node: &str,
    task: &SubgraphTask,
    history: &[CallUnit],
    doc: &ApiDocument,
    session: &mut Session<'_>,
) -> Result<ApiCall, SynthError> {
    let executed_at = |name: &str| history.iter().position(|u| u.call.api_name == name);
    let mut sources: BTreeMap<usize, (&str, &str)> = BTreeMap::new();
    for e in task.incoming(node) {
        let Some(at) = executed_at(&e.src) else { continue };
        let newer = sources.get(&e.param_index).is_none_or(|(prev, _)| executed_at(prev) < Some(at));
        if newer {
            sources.insert(e.param_index, (e.src.as_str(), e.justification.as_str()));
        }
    }

    let mut args = if sources.is_empty() {
        let request = prompts::request(PromptId::MakeFirstCall, &json!({"API Document": doc.to_json()}));
        declared_only(doc, reply_object(session.chat_json(&request)?))
    } else {
        let mut names = Map::new();
        let mut values = Map::new();
        let mut previous = Map::new();
        for (k, (src, reason)) in &sources {
            names.insert(k.to_string(), json!(doc.parameters[*k].name));
            values.insert(k.to_string(), json!({"docid": src, "reason": reason}));
            let unit = &history[executed_at(src).expect("sources were executed")];
            previous.insert(src.to_string(), unit.output.response.clone());
        }
        let request = prompts::request(
            PromptId::MakeCallStep1,
            &json!({
                "API Document": doc.to_json(),
                "Parameter Dictionary": names,
                "Parameter Value": values,
                "Previous Result": previous,
            }),
        );
        let reply = reply_object(session.chat_json(&request)?);
        let mut grounded = Map::new();
        for (k, (src, _)) in &sources {
            let param = &doc.parameters[*k].name;
            let source_output = &previous[*src];
            match reply.get(param) {
                Some(v) if !v.is_null() && value_contained(v, source_output) => {
                    grounded.insert(param.clone(), v.clone());
                }
                _ => {
                    return Err(SynthError::Extraction {
                        node: node.to_string(),
                        param: param.clone(),
                        source_fn: src.to_string(),
                    })
                }
            }
        }
        grounded
    };

    if doc.parameters.iter().any(|p| !args.contains_key(&p.name)) {
        let request = prompts::request(
            PromptId::MakeCallStep2,
            &json!({"API Document": doc.to_json(), "Partially Filled Parameters": Value::Object(args.clone())}),
        );
        for (k, v) in declared_only(doc, reply_object(session.chat_json(&request)?)) {
            args.entry(k).or_insert(v);
        }
    }
    if let Some(p) = doc.parameters.iter().find(|p| p.required && !args.contains_key(&p.name)) {
        return Err(SynthError::MissingRequired { node: node.to_string(), param: p.name.clone() });
    }
    Ok(ApiCall::new(node, args))
}

fn text_field(reply: &Value, field: &'static str) -> Result<String, SynthError> {
    match reply.get(field).and_then(Value::as_str) {
        Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
        _ => Err(SynthError::Provider(ProviderError::Format(format!("reply lacks a non-empty \"{field}\" string")))),
    }
}

pub fn gen_subquery(
    call: &ApiCall,
    doc: &ApiDocument,
    history: &[CallUnit],
    session: &mut Session<'_>,
) -> Result<String, SynthError> {
    let previous = object(history.iter().map(|u| (u.call.api_name.clone(), u.output.response.clone())));
    let request = prompts::request(
        PromptId::SubInstruction,
        &json!({"API Document": doc.to_json(), "API call": Value::Object(call.input.clone()), "Previous API Response": previous}),
    );
    text_field(&session.chat_json(&request)?, "instruction")
}

pub fn gen_user_query(
    subqueries: &[String],
    function_names: &[String],
    session: &mut Session<'_>,
) -> Result<String, SynthError> {
    let request = prompts::request(PromptId::UserQuery, &json!({"Subinstructions": subqueries}));
    let query = text_field(&session.chat_json(&request)?, "query")?;
    if let Some(name) = function_names.iter().find(|n| !n.is_empty() && query.contains(n.as_str())) {
        return Err(SynthError::Leak(name.clone()));
    }
    Ok(query)
}

pub fn gen_final_response(query: &str, units: &[CallUnit], session: &mut Session<'_>) -> Result<String, SynthError> {
    if units.is_empty() {
        return Err(SynthError::NoUnits);
    }
    let results: Vec<Value> = units
        .iter()
        .map(|u| json!({"subinstruction": u.sub_query, "api response": u.output.response}))
        .collect();
    let request = prompts::request(PromptId::FinalResponse, &json!({"User Query": query, "API Call Result": results}));
    text_field(&session.chat_json(&request)?, "final_answer")
}

fn attempt(task: &SubgraphTask, ctx: &SynthContext<'_>, session: &mut Session<'_>) -> Result<TaskSample, (Option<String>, SynthError)> {
    let mut units: Vec<CallUnit> = Vec::with_capacity(task.nodes.len());
    for node in &task.nodes {
        let at = |e: SynthError| (Some(node.clone()), e);
        let doc = ctx.doc(node).map_err(at)?;
        let call = fill_arguments(node, task, &units, doc, session).map_err(at)?;
        let output = match ctx.env.execute(&call) {
            Ok(o) if o.is_ok() => o,
            Ok(o) => return Err(at(SynthError::Execution { node: node.clone(), message: o.error })),
            Err(e) => return Err(at(SynthError::Execution { node: node.clone(), message: e.to_string() })),
        };
        let sub_query = gen_subquery(&call, doc, &units, session).map_err(at)?;
        units.push(CallUnit { sub_query, call, output });
    }
    let names: Vec<String> = ctx.docs.keys().cloned().collect();
    let subs: Vec<String> = units.iter().map(|u| u.sub_query.clone()).collect();
    let query = gen_user_query(&subs, &names, session).map_err(|e| (None, e))?;
    let final_response = gen_final_response(&query, &units, session).map_err(|e| (None, e))?;
    Ok(TaskSample {
        query,
        gold_path: units.iter().map(|u| u.call.api_name.clone()).collect(),
        units,
        final_response,
        provenance: Provenance { seed: task.seed, traces: Vec::new() },
    })
}

/// Runs one task end to end. Sample-local failures become `Aborted`;
/// transport, cache and strict-replay failures are returned as errors.
pub fn synth_sample(task: &SubgraphTask, ctx: &SynthContext<'_>) -> Result<SynthOutcome, SynthError> {
    let mut last = None;
    for _ in 0..=ctx.retries {
        let mut session = Session::new(ctx.provider);
        match attempt(task, ctx, &mut session) {
            Ok(mut sample) => {
                sample.provenance.traces = session.into_trace();
                return Ok(SynthOutcome::Sample(sample));
            }
            Err((_, e)) if !e.is_sample_local() => return Err(e),
            Err((node, e)) => last = Some((node, e)),
        }
    }
    let (node, e) = last.expect("at least one attempt ran");
    Ok(SynthOutcome::Aborted { node, cause: e.cause(), message: e.to_string() })
}

/// Parallel over tasks, strictly sequential within one; output keeps task order.
pub fn synth_all(
    tasks: &[SubgraphTask],
    ctx: &SynthContext<'_>,
    pool: &rayon::ThreadPool,
) -> Result<Vec<SynthOutcome>, SynthError> {
    pool.install(|| tasks.par_iter().map(|t| synth_sample(t, ctx)).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthStats {
    pub tasks: usize,
    pub samples: usize,
    pub aborted: BTreeMap<String, usize>,
}

pub fn stats(outcomes: &[SynthOutcome]) -> SynthStats {
    let mut s = SynthStats { tasks: outcomes.len(), ..SynthStats::default() };
    for o in outcomes {
        match o {
            SynthOutcome::Sample(_) => s.samples += 1,
            SynthOutcome::Aborted { cause, .. } => {
                let key = serde_json::to_value(cause).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                *s.aborted.entry(key).or_default() += 1;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api_spec::ParamDoc;
    use crate::dep_graph::{DependencyEdge, EdgeStage};
    use crate::provider::{Fixture, FixtureSet, ScriptedProvider};

    fn doc(name: &str, params: &[(&str, bool)]) -> ApiDocument {
        ApiDocument {
            tool: "t".into(),
            name: name.into(),
            description: String::new(),
            parameters: params
                .iter()
                .map(|(n, r)| ParamDoc { name: n.to_string(), type_tag: "string".into(), required: *r, description: String::new() })
                .collect(),
            output_schema: Value::Null,
        }
    }

    fn lone_task(node: &str) -> SubgraphTask {
        SubgraphTask { nodes: vec![node.into()], retained_edges: vec![], dropped_edges: vec![], seed: 0 }
    }

    #[test]
    fn unfilled_required_parameter_is_reported() {
        let p = ScriptedProvider::new(FixtureSet {
            fixtures: vec![
                Fixture::for_prompt(PromptId::MakeFirstCall, "{}"),
                Fixture::for_prompt(PromptId::MakeCallStep2, r#"{"unrelated": 1}"#),
            ],
        });
        let d = doc("f", &[("a", true)]);
        let err = fill_arguments("f", &lone_task("f"), &[], &d, &mut Session::new(&p)).unwrap_err();
        assert!(matches!(err, SynthError::MissingRequired { ref param, .. } if param == "a"));
    }

    #[test]
    fn edge_values_must_come_from_the_source_output() {
        let p = ScriptedProvider::new(FixtureSet {
            fixtures: vec![Fixture::for_prompt(PromptId::MakeCallStep1, r#"{"x": "invented"}"#)],
        });
        let task = SubgraphTask {
            nodes: vec!["s".into(), "d".into()],
            retained_edges: vec![DependencyEdge {
                stage: EdgeStage::PassedExecution,
                justification: "r".into(),
                ..DependencyEdge::new("s", "d", 0)
            }],
            dropped_edges: vec![],
            seed: 0,
        };
        let history = vec![CallUnit {
            sub_query: "q".into(),
            call: ApiCall::new("s", Map::new()),
            output: ApiOutput::ok(json!({"x": "real"})),
        }];
        let err = fill_arguments("d", &task, &history, &doc("d", &[("x", true)]), &mut Session::new(&p)).unwrap_err();
        assert!(matches!(err, SynthError::Extraction { .. }));
    }

    #[test]
    fn missing_instruction_is_a_format_error() {
        let p = ScriptedProvider::new(FixtureSet {
            fixtures: vec![Fixture::for_prompt(PromptId::SubInstruction, r#"{"thought": "t"}"#)],
        });
        let err = gen_subquery(&ApiCall::new("f", Map::new()), &doc("f", &[]), &[], &mut Session::new(&p)).unwrap_err();
        assert!(matches!(err, SynthError::Provider(ProviderError::Format(_))));
    }

    #[test]
    fn leaks_and_empty_units_are_rejected() {
        let p = ScriptedProvider::new(FixtureSet {
            fixtures: vec![Fixture::for_prompt(PromptId::UserQuery, r#"{"query": "Run TaxCalculator on my pay"}"#)],
        });
        let err = gen_user_query(&["s".into()], &["TaxCalculator".into()], &mut Session::new(&p)).unwrap_err();
        assert!(matches!(err, SynthError::Leak(ref n) if n == "TaxCalculator"));
        assert!(matches!(gen_final_response("q", &[], &mut Session::new(&p)), Err(SynthError::NoUnits)));
    }
}
