//! API dependency multidigraph and its embedding, LLM and execution filters.

use crate::api_spec::{ApiDocument, ParsedSpec};
use crate::json_util::object;
use crate::prompts::{self, PromptId};
use crate::provider::{cosine, ChatProvider, Embedder, EmbeddingVector, ProviderError, Session};
use crate::tool_env::{ApiCall, Executor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("function name '{0}' appears in more than one tool")]
    DuplicateName(String),
    #[error("tau must lie in [-1, 1], got {0}")]
    InvalidTau(f64),
    #[error("no spec or document for function '{0}'")]
    MissingSpec(String),
    #[error("embedding failed: {0}")]
    Embed(ProviderError),
    #[error("edge {edge}: {source}")]
    Provider { edge: EdgeId, source: ProviderError },
    #[error("stage metrics need at least one label")]
    EmptyLabels,
    #[error("label refers to edge {0} which is not in the graph")]
    UnknownLabel(EdgeId),
    #[error("invalid graph file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    Embedding,
    Llm,
    Execution,
}

impl FilterStage {
    pub const ALL: [FilterStage; 3] = [FilterStage::Embedding, FilterStage::Llm, FilterStage::Execution];

    fn rank(self) -> u8 {
        match self {
            FilterStage::Embedding => 1,
            FilterStage::Llm => 2,
            FilterStage::Execution => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCause {
    BelowThreshold,
    NotConnectable,
    Format,
    ExecFailure,
    Unverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeStage {
    Initial,
    PassedEmbedding,
    PassedLlm,
    PassedExecution,
    Rejected { stage: FilterStage, cause: RejectCause },
}

impl EdgeStage {
    /// Number of filters this edge has survived.
    pub fn survived(self) -> u8 {
        match self {
            EdgeStage::Initial => 0,
            EdgeStage::PassedEmbedding => 1,
            EdgeStage::PassedLlm => 2,
            EdgeStage::PassedExecution => 3,
            EdgeStage::Rejected { stage, .. } => stage.rank() - 1,
        }
    }

    pub fn is_rejected(self) -> bool {
        matches!(self, EdgeStage::Rejected { .. })
    }

    /// Still alive after `stage` ran.
    pub fn survived_through(self, stage: FilterStage) -> bool {
        self.survived() >= stage.rank()
    }
}

/// `(src, dst, k)`: output of `src` can fill parameter `k` of `dst`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId {
    pub src: String,
    pub dst: String,
    pub param_index: usize,
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}[{}]", self.src, self.dst, self.param_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub src: String,
    pub dst: String,
    pub param_index: usize,
    pub stage: EdgeStage,
    #[serde(default)]
    pub similarity: Option<f64>,
    #[serde(default)]
    pub justification: String,
}

impl DependencyEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, param_index: usize) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            param_index,
            stage: EdgeStage::Initial,
            similarity: None,
            justification: String::new(),
        }
    }

    pub fn id(&self) -> EdgeId {
        EdgeId { src: self.src.clone(), dst: self.dst.clone(), param_index: self.param_index }
    }

    fn reject(&mut self, stage: FilterStage, cause: RejectCause) {
        self.stage = EdgeStage::Rejected { stage, cause };
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<DependencyEdge>,
}

/// Per-stage audit counts; `survivors + rejected == edges` always.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub edges: usize,
    pub initial: usize,
    pub passed_embedding: usize,
    pub passed_llm: usize,
    pub passed_execution: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl DependencyGraph {
    /// Every ordered pair `(i, j)`, `i != j`, gets one edge per parameter of `j`.
    pub fn init_full(specs: &BTreeMap<String, ParsedSpec>) -> Self {
        let nodes: Vec<String> = specs.keys().cloned().collect();
        let mut edges = Vec::new();
        for src in &nodes {
            for (dst, spec) in specs {
                if src == dst {
                    continue;
                }
                edges.extend((0..spec.input_descriptions.len()).map(|k| DependencyEdge::new(src, dst, k)));
            }
        }
        edges.sort_by_key(|a| a.id());
        Self { nodes, edges }
    }

    pub fn survivors(&self) -> impl Iterator<Item = &DependencyEdge> {
        self.edges.iter().filter(|e| !e.stage.is_rejected())
    }

    /// Edges that passed every filter.
    pub fn final_edges(&self) -> impl Iterator<Item = &DependencyEdge> {
        self.edges.iter().filter(|e| e.stage == EdgeStage::PassedExecution)
    }

    pub fn counts(&self) -> StageCounts {
        let mut c = StageCounts { edges: self.edges.len(), ..StageCounts::default() };
        for e in &self.edges {
            match e.stage {
                EdgeStage::Initial => c.initial += 1,
                EdgeStage::PassedEmbedding => c.passed_embedding += 1,
                EdgeStage::PassedLlm => c.passed_llm += 1,
                EdgeStage::PassedExecution => c.passed_execution += 1,
                EdgeStage::Rejected { stage, cause } => {
                    let key = format!("{}:{}", tag(&stage), tag(&cause));
                    *c.rejected.entry(key).or_default() += 1;
                }
            }
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let text = serde_json::to_string_pretty(self).expect("graphs serialize");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let raw = std::fs::read_to_string(path)?;
        let g: Self = serde_json::from_str(&raw).map_err(|e| GraphError::Format(e.to_string()))?;
        let nodes: BTreeSet<&str> = g.nodes.iter().map(String::as_str).collect();
        if let Some(e) = g.edges.iter().find(|e| !nodes.contains(e.src.as_str()) || !nodes.contains(e.dst.as_str())) {
            return Err(GraphError::Format(format!("edge {} has an endpoint outside the node set", e.id())));
        }
        Ok(g)
    }
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Documents and parsed specs keyed by function name.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub docs: BTreeMap<String, ApiDocument>,
    pub specs: BTreeMap<String, ParsedSpec>,
}

impl Catalog {
    pub fn new(docs: &[ApiDocument], specs: &[ParsedSpec]) -> Result<Self, GraphError> {
        let mut by_name = BTreeMap::new();
        for d in docs {
            if by_name.insert(d.name.clone(), d.clone()).is_some() {
                return Err(GraphError::DuplicateName(d.name.clone()));
            }
        }
        let specs: BTreeMap<String, ParsedSpec> = specs.iter().map(|s| (s.name.clone(), s.clone())).collect();
        if let Some(name) = by_name.keys().find(|n| !specs.contains_key(*n)) {
            return Err(GraphError::MissingSpec(name.clone()));
        }
        Ok(Self { docs: by_name, specs })
    }

    fn doc(&self, name: &str) -> Result<&ApiDocument, GraphError> {
        self.docs.get(name).ok_or_else(|| GraphError::MissingSpec(name.to_string()))
    }

    fn spec(&self, name: &str) -> Result<&ParsedSpec, GraphError> {
        self.specs.get(name).ok_or_else(|| GraphError::MissingSpec(name.to_string()))
    }

    pub fn function_names(&self) -> Vec<String> {
        self.docs.keys().cloned().collect()
    }
}

/// Keeps edges whose cosine(In(dst, k), Out(src)) is at least `tau`.
/// Description strings are embedded verbatim, each distinct text once.
pub fn filter_embedding(
    g: &DependencyGraph,
    specs: &BTreeMap<String, ParsedSpec>,
    embedder: &dyn Embedder,
    tau: f64,
) -> Result<DependencyGraph, GraphError> {
    if !(-1.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(GraphError::InvalidTau(tau));
    }
    let mut vectors: HashMap<String, EmbeddingVector> = HashMap::new();
    let mut embed = |text: &str| -> Result<EmbeddingVector, GraphError> {
        if let Some(v) = vectors.get(text) {
            return Ok(v.clone());
        }
        let v = embedder.embed(text).map_err(GraphError::Embed)?;
        vectors.insert(text.to_string(), v.clone());
        Ok(v)
    };
    let mut out = g.clone();
    for e in out.edges.iter_mut().filter(|e| e.stage == EdgeStage::Initial) {
        let src = specs.get(&e.src).ok_or_else(|| GraphError::MissingSpec(e.src.clone()))?;
        let dst = specs.get(&e.dst).ok_or_else(|| GraphError::MissingSpec(e.dst.clone()))?;
        let input = dst
            .input_descriptions
            .get(e.param_index)
            .ok_or_else(|| GraphError::MissingSpec(format!("{}[{}]", e.dst, e.param_index)))?;
        let sim = cosine(&embed(input)?, &embed(&src.output_description)?);
        e.similarity = Some(sim);
        if sim >= tau {
            e.stage = EdgeStage::PassedEmbedding;
        } else {
            e.reject(FilterStage::Embedding, RejectCause::BelowThreshold);
        }
    }
    Ok(out)
}

/// `{"connectable": bool, "reason": str}`; `None` when the shape is wrong.
pub fn read_verdict(reply: &Value) -> Option<(bool, String)> {
    let connectable = match reply.get("connectable")? {
        Value::Bool(b) => *b,
        Value::String(s) if s.eq_ignore_ascii_case("true") => true,
        Value::String(s) if s.eq_ignore_ascii_case("false") => false,
        _ => return None,
    };
    let reason = match reply.get("reason") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    Some((connectable, reason))
}

pub fn llm_filter_request(catalog: &Catalog, e: &DependencyEdge) -> Result<crate::provider::ChatRequest, GraphError> {
    let src_doc = catalog.doc(&e.src)?;
    let dst_doc = catalog.doc(&e.dst)?;
    let src_spec = catalog.spec(&e.src)?;
    let dst_spec = catalog.spec(&e.dst)?;
    let param = dst_doc
        .parameters
        .get(e.param_index)
        .ok_or_else(|| GraphError::MissingSpec(format!("{}[{}]", e.dst, e.param_index)))?;
    let input = dst_spec.input_descriptions.get(e.param_index).cloned().unwrap_or_default();
    let payload = json!({
        "API1 Document": src_doc.to_json(),
        "API1 Semantic Descriptions": {"output": src_spec.output_description},
        "API2 Document": dst_doc.to_json(),
        "API2 Semantic Descriptions": object([(param.name.clone(), Value::String(input))]),
    });
    Ok(prompts::request(PromptId::LlmFilter, &payload))
}

fn is_format(e: &ProviderError) -> bool {
    matches!(e, ProviderError::Format(_))
}

fn par_over<T, F>(pool: &rayon::ThreadPool, edges: &[&DependencyEdge], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&DependencyEdge) -> T + Sync,
{
    pool.install(|| edges.par_iter().map(|e| f(e)).collect())
}

enum Outcome {
    Pass(String),
    Reject(RejectCause),
}

fn apply(
    g: &DependencyGraph,
    entering: EdgeStage,
    stage: FilterStage,
    passed: EdgeStage,
    pool: &rayon::ThreadPool,
    judge: impl Fn(&DependencyEdge) -> Result<Outcome, GraphError> + Sync,
) -> Result<DependencyGraph, GraphError> {
    let mut out = g.clone();
    let candidates: Vec<&DependencyEdge> = g.edges.iter().filter(|e| e.stage == entering).collect();
    let verdicts = par_over(pool, &candidates, &judge);
    let mut verdicts = verdicts.into_iter();
    for e in out.edges.iter_mut().filter(|e| e.stage == entering) {
        match verdicts.next().expect("one verdict per candidate")? {
            Outcome::Pass(reason) => {
                e.stage = passed;
                if !reason.is_empty() {
                    e.justification = reason;
                }
            }
            Outcome::Reject(cause) => e.reject(stage, cause),
        }
    }
    Ok(out)
}

/// One chat call per embedding survivor; the reply's reason becomes the
/// edge's justification.
pub fn filter_llm(
    g: &DependencyGraph,
    catalog: &Catalog,
    provider: &dyn ChatProvider,
    pool: &rayon::ThreadPool,
) -> Result<DependencyGraph, GraphError> {
    apply(g, EdgeStage::PassedEmbedding, FilterStage::Llm, EdgeStage::PassedLlm, pool, |e| {
        let request = llm_filter_request(catalog, e)?;
        let reply = match Session::new(provider).chat_json(&request) {
            Ok(v) => v,
            Err(err) if is_format(&err) => return Ok(Outcome::Reject(RejectCause::Format)),
            Err(source) => return Err(GraphError::Provider { edge: e.id(), source }),
        };
        Ok(match read_verdict(&reply) {
            None => Outcome::Reject(RejectCause::Format),
            Some((true, reason)) if !reason.trim().is_empty() => Outcome::Pass(reason),
            Some((true, _)) => Outcome::Reject(RejectCause::Format),
            Some((false, _)) => Outcome::Reject(RejectCause::NotConnectable),
        })
    })
}

fn args_from(reply: Value) -> Option<Map<String, Value>> {
    match reply {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Grounds each LLM survivor by execution: instantiate and run the source,
/// derive the destination's arguments from its output, then ask whether the
/// output was actually used.
pub fn filter_execution(
    g: &DependencyGraph,
    catalog: &Catalog,
    provider: &dyn ChatProvider,
    env: &dyn Executor,
    pool: &rayon::ThreadPool,
) -> Result<DependencyGraph, GraphError> {
    apply(g, EdgeStage::PassedLlm, FilterStage::Execution, EdgeStage::PassedExecution, pool, |e| {
        let mut session = Session::new(provider);
        let provider_err = |source: ProviderError| -> Result<Outcome, GraphError> {
            if is_format(&source) {
                Ok(Outcome::Reject(RejectCause::Format))
            } else {
                Err(GraphError::Provider { edge: e.id(), source })
            }
        };
        let src_doc = catalog.doc(&e.src)?;
        let dst_doc = catalog.doc(&e.dst)?;

        let first = prompts::request(PromptId::EdgeFirstCall, &json!({"API Document": src_doc.to_json()}));
        let src_args = match session.chat_json(&first) {
            Ok(v) => v,
            Err(err) => return provider_err(err),
        };
        let Some(src_args) = args_from(src_args) else {
            return Ok(Outcome::Reject(RejectCause::Format));
        };
        let output = match env.execute(&ApiCall::new(e.src.clone(), src_args)) {
            Ok(o) if o.is_ok() => o,
            _ => return Ok(Outcome::Reject(RejectCause::ExecFailure)),
        };

        let next = prompts::request(
            PromptId::EdgeSubsequentCall,
            &json!({
                "API Document": dst_doc.to_json(),
                "API Call Results": object([(e.src.clone(), output.response.clone())]),
                "Reason": [e.justification],
            }),
        );
        let dst_args = match session.chat_json(&next) {
            Ok(v) => v,
            Err(err) => return provider_err(err),
        };
        let Some(dst_args) = args_from(dst_args) else {
            return Ok(Outcome::Reject(RejectCause::Format));
        };

        let check = prompts::request(
            PromptId::CallFilter,
            &json!({"api_result": output.response, "llm_result": Value::Object(dst_args)}),
        );
        let verdict = match session.chat_json(&check) {
            Ok(v) => v,
            Err(err) => return provider_err(err),
        };
        Ok(match read_verdict(&verdict) {
            None => Outcome::Reject(RejectCause::Format),
            // The LLM-stage justification is what the synthesizer consumes.
            Some((true, _)) => Outcome::Pass(String::new()),
            Some((false, _)) => Outcome::Reject(RejectCause::Unverified),
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub precision: f64,
    pub recall: f64,
    /// False when nothing was predicted positive; `precision` is then 0.
    pub precision_defined: bool,
    /// False when no labeled edge is positive; `recall` is then 0.
    pub recall_defined: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl StageMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { (0.0, false) } else { (num as f64 / den as f64, true) };
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let (recall, recall_defined) = ratio(tp, tp + fn_);
        Self { precision, recall, precision_defined, recall_defined, tp, fp, fn_ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: FilterStage,
    /// Positive = survived every filter up to and including this one.
    pub cumulative: StageMetrics,
    /// Only edges that entered this stage; positive = survived it.
    pub isolated: StageMetrics,
}

/// Precision/recall per stage against hand labels over `Initial` edges.
pub fn stage_metrics(g: &DependencyGraph, labels: &BTreeMap<EdgeId, bool>) -> Result<Vec<StageReport>, GraphError> {
    if labels.is_empty() {
        return Err(GraphError::EmptyLabels);
    }
    let by_id: HashMap<EdgeId, EdgeStage> = g.edges.iter().map(|e| (e.id(), e.stage)).collect();
    let mut labeled = Vec::with_capacity(labels.len());
    for (id, truth) in labels {
        let stage = *by_id.get(id).ok_or_else(|| GraphError::UnknownLabel(id.clone()))?;
        labeled.push((stage.survived(), *truth));
    }
    let metrics = |entered: u8, through: u8| {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for &(survived, truth) in labeled.iter().filter(|(s, _)| *s >= entered) {
            match (survived >= through, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        StageMetrics::from_counts(tp, fp, fn_)
    };
    Ok(FilterStage::ALL
        .iter()
        .map(|&stage| StageReport {
            stage,
            cumulative: metrics(0, stage.rank()),
            isolated: metrics(stage.rank() - 1, stage.rank()),
        })
        .collect())
}
