//! Prompting baselines that solve a query against an environment with a
//! document retriever, selected by name from a registry.

use crate::api_spec::ApiDocument;
use crate::prompts::{self, PromptId};
use crate::provider::{ChatProvider, Embedder, ProviderError, Session};
use crate::retriever::{DocIndex, RetrieverError};
use crate::tool_env::{ApiCall, ApiOutput, Executor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_MAX_STEPS: usize = 10;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("could not read a plan: {0}")]
    PlanParse(String),
    #[error("unknown agent '{0}'")]
    UnknownAgent(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
}

pub struct AgentContext<'a> {
    pub provider: &'a dyn ChatProvider,
    pub env: &'a dyn Executor,
    pub index: &'a DocIndex,
    pub embedder: &'a dyn Embedder,
    pub docs: &'a BTreeMap<String, ApiDocument>,
    pub top_k: usize,
    pub max_steps: usize,
}

impl AgentContext<'_> {
    fn retrieve(&self, text: &str) -> Result<Vec<String>, AgentError> {
        Ok(self.index.search_ids(self.embedder, text, self.top_k)?)
    }

    fn doc_values(&self, ids: &[String]) -> Vec<Value> {
        ids.iter().filter_map(|id| self.docs.get(id)).map(ApiDocument::to_json).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedCall {
    pub api_name: String,
    pub input: Map<String, Value>,
    pub output: ApiOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepErrorKind {
    UnknownFunction,
    NoSelectableApi,
    Format,
    ApiError,
    /// The run stopped before any call because no plan could be read.
    Plan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub step: usize,
    pub kind: StepErrorKind,
    pub api_name: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub agent: String,
    /// Retrieved document ids, one list per retrieval.
    pub retrieved: Vec<Vec<String>>,
    pub plan: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subinstructions: Vec<String>,
    pub calls: Vec<ExecutedCall>,
    pub final_answer: String,
    pub step_errors: Vec<StepError>,
    pub step_limit_reached: bool,
}

impl Trajectory {
    fn new(query: &str, agent: &str) -> Self {
        Self {
            query: query.to_string(),
            agent: agent.to_string(),
            retrieved: Vec::new(),
            plan: Vec::new(),
            subinstructions: Vec::new(),
            calls: Vec::new(),
            final_answer: String::new(),
            step_errors: Vec::new(),
            step_limit_reached: false,
        }
    }

    fn flag(&mut self, step: usize, kind: StepErrorKind, api_name: Option<&str>, message: impl Into<String>) {
        self.step_errors.push(StepError { step, kind, api_name: api_name.map(str::to_string), message: message.into() });
    }

    /// Record for a run that produced no usable plan.
    pub fn failed(query: &str, agent: &str, message: impl Into<String>) -> Self {
        let mut t = Self::new(query, agent);
        t.flag(0, StepErrorKind::Plan, None, message);
        t
    }

    pub fn called_functions(&self) -> Vec<String> {
        self.calls.iter().map(|c| c.api_name.clone()).collect()
    }
}

pub trait Agent: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(&self, query: &str, ctx: &AgentContext<'_>) -> Result<Trajectory, AgentError>;
}

pub struct AgentRegistry {
    agents: BTreeMap<&'static str, Box<dyn Agent>>,
}

impl AgentRegistry {
    pub fn empty() -> Self {
        Self { agents: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(GlobalAgent));
        r.register(Box::new(ReactAgent));
        r.register(Box::new(ReactDecomposerAgent));
        r.register(Box::new(GlobalDecomposerAgent));
        r
    }

    /// Replaces any agent already registered under the same name.
    pub fn register(&mut self, agent: Box<dyn Agent>) {
        self.agents.insert(agent.name(), agent);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Agent, AgentError> {
        self.agents.get(name).map(|a| a.as_ref()).ok_or_else(|| AgentError::UnknownAgent(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.agents.keys().copied().collect()
    }
}

fn history(calls: &[ExecutedCall]) -> Value {
    serde_json::to_value(calls).expect("calls serialize")
}

fn string_list(reply: &Value, key: &str) -> Option<Vec<String>> {
    let items = reply.get(key)?.as_array()?;
    let list: Vec<String> = items.iter().filter_map(Value::as_str).map(str::to_string).collect();
    (list.len() == items.len() && !list.is_empty()).then_some(list)
}

fn plan_from(session: &mut Session<'_>, prompt: PromptId, payload: &Value, key: &str) -> Result<Vec<String>, AgentError> {
    let reply = match session.chat_json(&prompts::request(prompt, payload)) {
        Ok(v) => v,
        Err(ProviderError::Format(m)) => return Err(AgentError::PlanParse(m)),
        Err(e) => return Err(e.into()),
    };
    string_list(&reply, key).ok_or_else(|| AgentError::PlanParse(format!("reply has no non-empty \"{key}\" array")))
}

/// Chat for a JSON object; a format failure becomes `None` so the caller can
/// flag the step and move on.
fn ask(session: &mut Session<'_>, prompt: PromptId, payload: &Value) -> Result<Option<Value>, AgentError> {
    match session.chat_json(&prompts::request(prompt, payload)) {
        Ok(v) if v.is_object() => Ok(Some(v)),
        Ok(_) | Err(ProviderError::Format(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Runs one call, recording it and flagging in-band failures. Names the
/// environment does not know are flagged without being recorded.
fn execute(ctx: &AgentContext<'_>, t: &mut Trajectory, step: usize, api_name: &str, input: Map<String, Value>) -> ApiOutput {
    match ctx.env.execute(&ApiCall::new(api_name, input.clone())) {
        Ok(output) => {
            if !output.is_ok() {
                t.flag(step, StepErrorKind::ApiError, Some(api_name), output.error.clone());
            }
            t.calls.push(ExecutedCall { api_name: api_name.to_string(), input, output: output.clone() });
            output
        }
        Err(e) => {
            t.flag(step, StepErrorKind::UnknownFunction, Some(api_name), e.to_string());
            ApiOutput::err(e.to_string())
        }
    }
}

fn final_answer(session: &mut Session<'_>, query: &str, t: &mut Trajectory) -> Result<(), AgentError> {
    let payload = json!({"User Query": query, "API Call Results": history(&t.calls)});
    match ask(session, PromptId::AgentFinalAnswer, &payload)? {
        Some(reply) => t.final_answer = reply["final_answer"].as_str().unwrap_or_default().to_string(),
        None => t.flag(t.calls.len(), StepErrorKind::Format, None, "final answer reply was not a JSON object"),
    }
    Ok(())
}

fn input_of(v: &Value) -> Map<String, Value> {
    v.as_object().cloned().unwrap_or_default()
}

/// Plans the whole function sequence in one shot, then fills arguments
/// call by call from the outputs so far.
pub struct GlobalAgent;

impl Agent for GlobalAgent {
    fn name(&self) -> &'static str {
        "global"
    }

    fn run(&self, query: &str, ctx: &AgentContext<'_>) -> Result<Trajectory, AgentError> {
        let mut t = Trajectory::new(query, self.name());
        let mut session = Session::new(ctx.provider);
        let retrieved = ctx.retrieve(query)?;
        let payload = json!({"User Query": query, "API Documents": ctx.doc_values(&retrieved)});
        t.plan = plan_from(&mut session, PromptId::AgentGlobalPlan, &payload, "plan")?;
        t.retrieved.push(retrieved.clone());
        for (step, name) in t.plan.clone().iter().enumerate() {
            let Some(doc) = ctx.docs.get(name).filter(|_| retrieved.contains(name)) else {
                t.flag(step, StepErrorKind::UnknownFunction, Some(name), format!("'{name}' is not among the retrieved documents"));
                continue;
            };
            let payload = json!({"User Query": query, "API Document": doc.to_json(), "Previous Calls": history(&t.calls)});
            let Some(args) = ask(&mut session, PromptId::AgentCallArgs, &payload)? else {
                t.flag(step, StepErrorKind::Format, Some(name), "argument reply was not a JSON object");
                continue;
            };
            execute(ctx, &mut t, step, name, input_of(&args));
        }
        final_answer(&mut session, query, &mut t)?;
        Ok(t)
    }
}

/// Chooses the next call, or finishes, after seeing the full history.
pub struct ReactAgent;

impl Agent for ReactAgent {
    fn name(&self) -> &'static str {
        "react"
    }

    fn run(&self, query: &str, ctx: &AgentContext<'_>) -> Result<Trajectory, AgentError> {
        let mut t = Trajectory::new(query, self.name());
        let mut session = Session::new(ctx.provider);
        let retrieved = ctx.retrieve(query)?;
        let docs = ctx.doc_values(&retrieved);
        t.retrieved.push(retrieved.clone());
        // History seen by the model also carries calls that never reached the environment.
        let mut seen: Vec<ExecutedCall> = Vec::new();
        for step in 0..ctx.max_steps {
            let payload = json!({"User Query": query, "API Documents": docs, "History": history(&seen)});
            let Some(reply) = ask(&mut session, PromptId::AgentReactStep, &payload)? else {
                t.flag(step, StepErrorKind::Format, None, "step reply was not a JSON object");
                continue;
            };
            match reply["action"].as_str() {
                Some("finish") => {
                    t.final_answer = reply["final_answer"].as_str().unwrap_or_default().to_string();
                    return Ok(t);
                }
                Some("call") => {
                    let Some(name) = reply["api_name"].as_str() else {
                        t.flag(step, StepErrorKind::Format, None, "call without api_name");
                        continue;
                    };
                    let input = input_of(&reply["input"]);
                    t.plan.push(name.to_string());
                    let output = if retrieved.iter().any(|r| r == name) {
                        execute(ctx, &mut t, step, name, input.clone())
                    } else {
                        let message = format!("unknown function '{name}'");
                        t.flag(step, StepErrorKind::UnknownFunction, Some(name), message.clone());
                        ApiOutput::err(message)
                    };
                    seen.push(ExecutedCall { api_name: name.to_string(), input, output });
                }
                _ => t.flag(step, StepErrorKind::Format, None, "unrecognized action"),
            }
        }
        t.step_limit_reached = true;
        Ok(t)
    }
}

#[derive(Serialize)]
struct DecomposedStep<'a> {
    subinstruction: &'a str,
    api_name: Option<&'a str>,
    input: &'a Map<String, Value>,
    output: &'a ApiOutput,
}

/// Retrieve, select and execute for one subinstruction.
fn carry_out(
    ctx: &AgentContext<'_>,
    session: &mut Session<'_>,
    t: &mut Trajectory,
    sub: &str,
    step: usize,
    log: &mut Vec<Value>,
) -> Result<(), AgentError> {
    let retrieved = ctx.retrieve(sub)?;
    let payload = json!({"Subinstruction": sub, "API Documents": ctx.doc_values(&retrieved), "History": log});
    t.retrieved.push(retrieved.clone());
    t.subinstructions.push(sub.to_string());
    let reply = ask(session, PromptId::AgentSelectCall, &payload)?;
    let selected = reply.as_ref().and_then(|r| r["api_name"].as_str()).filter(|n| retrieved.iter().any(|r| r == n));
    let input = reply.as_ref().map(|r| input_of(&r["input"])).unwrap_or_default();
    let (name, output) = match selected {
        Some(name) => {
            t.plan.push(name.to_string());
            (Some(name), execute(ctx, t, step, name, input.clone()))
        }
        None => {
            let kind = if reply.is_none() { StepErrorKind::Format } else { StepErrorKind::NoSelectableApi };
            t.flag(step, kind, None, format!("no API selected for: {sub}"));
            (None, ApiOutput::err("no API selected"))
        }
    };
    let entry = DecomposedStep { subinstruction: sub, api_name: name, input: &input, output: &output };
    log.push(serde_json::to_value(entry).expect("steps serialize"));
    Ok(())
}

/// Produces one subinstruction at a time, each retrieved and executed
/// before the next is chosen.
pub struct ReactDecomposerAgent;

impl Agent for ReactDecomposerAgent {
    fn name(&self) -> &'static str {
        "react_decomposer"
    }

    fn run(&self, query: &str, ctx: &AgentContext<'_>) -> Result<Trajectory, AgentError> {
        let mut t = Trajectory::new(query, self.name());
        let mut session = Session::new(ctx.provider);
        let mut log: Vec<Value> = Vec::new();
        for step in 0..ctx.max_steps {
            let payload = json!({"User Query": query, "History": log});
            let Some(reply) = ask(&mut session, PromptId::AgentDecomposeStep, &payload)? else {
                t.flag(step, StepErrorKind::Format, None, "step reply was not a JSON object");
                continue;
            };
            match (reply["action"].as_str(), reply["subinstruction"].as_str()) {
                (Some("finish"), _) => {
                    t.final_answer = reply["final_answer"].as_str().unwrap_or_default().to_string();
                    return Ok(t);
                }
                (Some("subinstruction"), Some(sub)) => carry_out(ctx, &mut session, &mut t, sub, step, &mut log)?,
                _ => t.flag(step, StepErrorKind::Format, None, "unrecognized action"),
            }
        }
        t.step_limit_reached = true;
        Ok(t)
    }
}

/// Plans every subinstruction up front, then carries them out in order.
pub struct GlobalDecomposerAgent;

impl Agent for GlobalDecomposerAgent {
    fn name(&self) -> &'static str {
        "global_decomposer"
    }

    fn run(&self, query: &str, ctx: &AgentContext<'_>) -> Result<Trajectory, AgentError> {
        let mut t = Trajectory::new(query, self.name());
        let mut session = Session::new(ctx.provider);
        let subs = plan_from(&mut session, PromptId::AgentDecomposePlan, &json!({"User Query": query}), "subinstructions")?;
        let mut log: Vec<Value> = Vec::new();
        for (step, sub) in subs.iter().enumerate() {
            carry_out(ctx, &mut session, &mut t, sub, step, &mut log)?;
        }
        final_answer(&mut session, query, &mut t)?;
        Ok(t)
    }
}

/// Runs `agent` over every query on a bounded pool; output keeps query order.
pub fn run_all(
    agent: &dyn Agent,
    queries: &[String],
    ctx: &AgentContext<'_>,
    pool: &rayon::ThreadPool,
) -> Vec<Result<Trajectory, AgentError>> {
    pool.install(|| queries.par_iter().map(|q| agent.run(q, ctx)).collect())
}
