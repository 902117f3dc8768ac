//! Stage-by-stage driver. Every stage reads the previous stage's artifacts
//! from the output directory and writes its own, so runs can resume from
//! any point with the response cache warm.

use crate::agent::{run_all, AgentContext, AgentError, AgentRegistry, Trajectory};
use crate::api_spec::{self, ApiDocument, ApiSpecError, ParsedSpec};
use crate::config::{ConfigError, EmbedderKind, EnvKind, PipelineConfig, ProviderKind};
use crate::dataset_io::{self, DatasetError, SampleRecord};
use crate::dep_graph::{self, Catalog, DependencyGraph, GraphError};
use crate::eval::{self, EvalError};
use crate::provider::http::{Transport, UreqTransport};
use crate::provider::{
    CachedProvider, ChatProvider, Embedder, FixtureSet, OpenAiChat, OpenAiEmbedder, ProviderError, ResponseCache,
    ScriptedProvider, TrigramEmbedder,
};
use crate::retriever::{self, DocIndex, RetrieverError};
use crate::sampler::{self, SamplerConfig, SamplerError};
use crate::sim::{self, GoldStep, GoldTrace, SimOracle};
use crate::synth::{self, SynthContext, SynthError, SynthOutcome};
use crate::tool_env::{Executor, RestConfig, RestExecutor, SimEnvironment, SimManifest, ToolEnvError};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

pub const SPECS: &str = "specs.jsonl";
pub const GRAPH: &str = "graph.json";
pub const TASKS: &str = "tasks.jsonl";
pub const SAMPLES: &str = "samples.jsonl";
pub const ABORTED: &str = "aborted.jsonl";
pub const SYNTH_STATS: &str = "synth_stats.json";
pub const SFT: &str = "sft.jsonl";
pub const RETRIEVER_PAIRS: &str = "retriever_pairs.jsonl";
pub const INDEX_DIR: &str = "index";
pub const RECALL: &str = "recall.json";
pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const REPORT: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input artifact {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Spec(#[from] ApiSpecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error("query '{query}': {source}")]
    Agent { query: String, source: AgentError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    ToolEnv(#[from] ToolEnvError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Bad configuration or malformed input, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config(_)
                | Self::Spec(ApiSpecError::Schema { .. })
                | Self::Sampler(SamplerError::Schema { .. })
                | Self::Dataset(DatasetError::Schema { .. })
                | Self::Agent { source: AgentError::UnknownAgent(_), .. }
        )
    }
}

pub fn worker_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .thread_name(|i| format!("goat-worker-{i}"))
        .build()
        .expect("thread pool starts")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    std::fs::write(path, text).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    dataset_io::write_jsonl(path, items).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn gold_traces(samples: &[SampleRecord]) -> Vec<GoldTrace> {
    samples
        .iter()
        .map(|s| GoldTrace {
            query: s.query.clone(),
            steps: s
                .api_path
                .iter()
                .map(|p| GoldStep { api_name: p.api_name.clone(), sub_instruction: p.sub_instruction.clone() })
                .collect(),
        })
        .collect()
}

pub struct Pipeline {
    config: PipelineConfig,
    transport: Arc<dyn Transport>,
    pool: rayon::ThreadPool,
    cache: Arc<ResponseCache>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let timeout = Duration::from_secs(config.provider.timeout_secs);
        Self::with_transport(config, Arc::new(UreqTransport::new(timeout)))
    }

    /// All HTTP traffic (chat, embeddings, REST tools) goes through `transport`.
    pub fn with_transport(config: PipelineConfig, transport: Arc<dyn Transport>) -> Result<Self, PipelineError> {
        config.validate()?;
        let out = &config.paths.out_dir;
        std::fs::create_dir_all(out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
        let cache = Arc::new(ResponseCache::open(config.cache_dir())?);
        let pool = worker_pool(config.workers);
        Ok(Self { config, transport, pool, cache })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.config.artifact(name)
    }

    fn input(&self, name: &str) -> Result<PathBuf, PipelineError> {
        let path = self.artifact(name);
        if path.exists() { Ok(path) } else { Err(PipelineError::MissingArtifact(path)) }
    }

    fn manifest(&self) -> Result<SimManifest, PipelineError> {
        match &self.config.env.manifest {
            Some(path) => Ok(SimManifest::load(path)?),
            None => Ok(sim::manifest()),
        }
    }

    pub fn corpus(&self) -> Result<Vec<ApiDocument>, PipelineError> {
        if let Some(path) = &self.config.paths.corpus {
            return Ok(api_spec::load_corpus(path)?);
        }
        if self.config.env.manifest.is_some() {
            return Ok(self.manifest()?.documents());
        }
        Ok(sim::corpus())
    }

    fn docs(&self) -> Result<BTreeMap<String, ApiDocument>, PipelineError> {
        Ok(self.corpus()?.into_iter().map(|d| (d.name.clone(), d)).collect())
    }

    fn fixtures(&self) -> Result<FixtureSet, PipelineError> {
        let mut set = sim::fixtures();
        if let Some(path) = &self.config.provider.fixtures {
            set.extend(FixtureSet::load(path)?);
        }
        Ok(set)
    }

    /// Chat provider behind the shared response cache. `memory` lets the
    /// stand-in model answer agent prompts for known queries.
    pub fn provider(&self, memory: Vec<GoldTrace>) -> Result<Box<dyn ChatProvider>, PipelineError> {
        let p = &self.config.provider;
        Ok(match p.kind {
            ProviderKind::Sim => {
                let oracle = SimOracle::new(&self.manifest()?).with_memory(memory);
                Box::new(CachedProvider::new(sim::recording_provider(self.fixtures()?, oracle), self.cache.clone()))
            }
            ProviderKind::Replay => {
                Box::new(CachedProvider::new(ScriptedProvider::new(self.fixtures()?), self.cache.clone()))
            }
            ProviderKind::Openai => {
                let chat =
                    OpenAiChat::new(&p.endpoint, &p.model, self.transport.clone()).with_max_retries(p.max_retries);
                Box::new(CachedProvider::new(chat, self.cache.clone()))
            }
        })
    }

    pub fn embedder(&self) -> Box<dyn Embedder> {
        let p = &self.config.provider;
        match p.embedder {
            EmbedderKind::Trigram => Box::new(TrigramEmbedder),
            EmbedderKind::Openai => Box::new(OpenAiEmbedder::new(
                &p.endpoint,
                &p.embedding_model,
                p.embedding_dimension,
                self.transport.clone(),
            )),
        }
    }

    pub fn environment(&self) -> Result<Box<dyn Executor>, PipelineError> {
        let env = &self.config.env;
        Ok(match env.kind {
            EnvKind::Sim => Box::new(SimEnvironment::from_manifest(&self.manifest()?)?),
            EnvKind::Rest => {
                let config = RestConfig {
                    base_url: env.base_url.clone().expect("validated"),
                    auth_header: env.auth_header.clone(),
                    max_in_flight: env.max_in_flight,
                };
                let names = self.corpus()?.into_iter().map(|d| d.name);
                Box::new(RestExecutor::new(config, self.transport.clone()).with_known(names))
            }
        })
    }

    fn specs(&self) -> Result<Vec<ParsedSpec>, PipelineError> {
        Ok(dataset_io::read_jsonl(self.input(SPECS)?)?)
    }

    fn samples(&self) -> Result<Vec<SampleRecord>, PipelineError> {
        Ok(dataset_io::read_samples(self.input(SAMPLES)?, self.config.strict)?)
    }

    pub fn parse(&self) -> Result<Value, PipelineError> {
        let docs = self.corpus()?;
        let provider = self.provider(Vec::new())?;
        let specs = api_spec::parse_all(&docs, provider.as_ref(), self.config.parse_mode, &self.pool)?;
        write_lines(&self.artifact(SPECS), &specs)?;
        Ok(json!({"documents": docs.len(), "specs": specs.len()}))
    }

    pub fn graph(&self) -> Result<Value, PipelineError> {
        let catalog = Catalog::new(&self.corpus()?, &self.specs()?)?;
        let provider = self.provider(Vec::new())?;
        let env = self.environment()?;
        let g = DependencyGraph::init_full(&catalog.specs);
        let g = dep_graph::filter_embedding(&g, &catalog.specs, self.embedder().as_ref(), self.config.tau)?;
        let g = dep_graph::filter_llm(&g, &catalog, provider.as_ref(), &self.pool)?;
        let g = dep_graph::filter_execution(&g, &catalog, provider.as_ref(), env.as_ref(), &self.pool)?;
        g.save(self.artifact(GRAPH))?;
        Ok(serde_json::to_value(g.counts()).expect("counts serialize"))
    }

    pub fn sample(&self) -> Result<Value, PipelineError> {
        let g = DependencyGraph::load(self.input(GRAPH)?)?;
        let config = SamplerConfig {
            max_nodes: self.config.max_nodes,
            cap_per_size: self.config.cap_per_size,
            seed: self.config.seed,
        };
        let tasks = self.pool.install(|| sampler::sample_tasks(&g, &config))?;
        write_lines(&self.artifact(TASKS), &tasks)?;
        Ok(json!({"tasks": tasks.len()}))
    }

    pub fn synth(&self) -> Result<Value, PipelineError> {
        let tasks = sampler::read_tasks(self.input(TASKS)?)?;
        let docs = self.docs()?;
        let provider = self.provider(Vec::new())?;
        let env = self.environment()?;
        let ctx = SynthContext {
            docs: &docs,
            env: env.as_ref(),
            provider: provider.as_ref(),
            retries: self.config.synth_retries,
        };
        let outcomes = synth::synth_all(&tasks, &ctx, &self.pool)?;
        let mut samples = Vec::new();
        let mut aborted = Vec::new();
        for (task, outcome) in tasks.iter().zip(&outcomes) {
            match outcome {
                SynthOutcome::Sample(s) => samples.push(SampleRecord::from_sample(s)),
                SynthOutcome::Aborted { node, cause, message } => aborted.push(json!({
                    "nodes": task.nodes, "node": node, "cause": cause, "message": message,
                })),
            }
        }
        dataset_io::write_samples(self.artifact(SAMPLES), &samples)
            .map_err(|source| PipelineError::Io { path: self.artifact(SAMPLES), source })?;
        write_lines(&self.artifact(ABORTED), &aborted)?;
        let stats = synth::stats(&outcomes);
        write_json(&self.artifact(SYNTH_STATS), &stats)?;
        Ok(serde_json::to_value(stats).expect("stats serialize"))
    }

    pub fn build_index(&self) -> Result<DocIndex, PipelineError> {
        Ok(DocIndex::build(&self.corpus()?, self.embedder().as_ref())?)
    }

    /// SFT prompts show the top-k retrieved documents, followed by any gold
    /// document the retriever missed.
    pub fn export(&self) -> Result<Value, PipelineError> {
        let samples = self.samples()?;
        let docs = self.docs()?;
        let embedder = self.embedder();
        let index = self.build_index()?;
        let mut contexts = Vec::with_capacity(samples.len());
        for s in &samples {
            let mut ids = index.search_ids(embedder.as_ref(), &s.query, self.config.top_k)?;
            for gold in s.gold_path() {
                if !ids.contains(&gold) {
                    ids.push(gold);
                }
            }
            contexts.push((s.query.clone(), ids));
        }
        let lookup: BTreeMap<String, Vec<String>> = contexts.into_iter().collect();
        let sft = dataset_io::export_sft(&samples, &docs, |s| lookup.get(&s.query).cloned().unwrap_or_default())?;
        let pairs = dataset_io::export_retriever_pairs(&samples);
        write_lines(&self.artifact(SFT), &sft)?;
        write_lines(&self.artifact(RETRIEVER_PAIRS), &pairs)?;
        index.save(self.artifact(INDEX_DIR))?;
        Ok(json!({"sft": sft.len(), "retriever_pairs": pairs.len(), "indexed": index.len()}))
    }

    fn index(&self) -> Result<DocIndex, PipelineError> {
        let dir = self.artifact(INDEX_DIR);
        if dir.exists() { Ok(DocIndex::load(dir)?) } else { self.build_index() }
    }

    pub fn retrieve_eval(&self) -> Result<Value, PipelineError> {
        let samples = self.samples()?;
        let report = retriever::recall_eval(&self.index()?, self.embedder().as_ref(), &samples, self.config.top_k)?;
        write_json(&self.artifact(RECALL), &report)?;
        Ok(json!({"k": report.k, "recall_at_gt": report.recall_at_gt, "recall_at_k": report.recall_at_k}))
    }

    pub fn agent(&self) -> Result<Value, PipelineError> {
        let registry = AgentRegistry::with_builtins();
        let name = self.config.agent.clone();
        let agent = registry.get(&name).map_err(|source| PipelineError::Agent { query: String::new(), source })?;
        let samples = self.samples()?;
        let docs = self.docs()?;
        let provider = self.provider(gold_traces(&samples))?;
        let env = self.environment()?;
        let embedder = self.embedder();
        let index = self.index()?;
        let ctx = AgentContext {
            provider: provider.as_ref(),
            env: env.as_ref(),
            index: &index,
            embedder: embedder.as_ref(),
            docs: &docs,
            top_k: self.config.top_k,
            max_steps: self.config.max_steps,
        };
        let queries: Vec<String> = samples.iter().map(|s| s.query.clone()).collect();
        let mut trajectories = Vec::with_capacity(queries.len());
        for (query, result) in queries.iter().zip(run_all(agent, &queries, &ctx, &self.pool)) {
            trajectories.push(match result {
                Ok(t) => t,
                Err(AgentError::PlanParse(message)) => Trajectory::failed(query, &name, message),
                Err(source) => return Err(PipelineError::Agent { query: query.clone(), source }),
            });
        }
        write_lines(&self.artifact(TRAJECTORIES), &trajectories)?;
        let calls: usize = trajectories.iter().map(|t| t.calls.len()).sum();
        Ok(json!({"agent": name, "trajectories": trajectories.len(), "calls": calls}))
    }

    pub fn eval(&self) -> Result<Value, PipelineError> {
        let samples = self.samples()?;
        let trajectories: Vec<Trajectory> = dataset_io::read_jsonl(self.input(TRAJECTORIES)?)?;
        let judge = if self.config.judge { Some(self.provider(Vec::new())?) } else { None };
        let report = eval::evaluate(&trajectories, &samples, judge.as_deref(), &self.pool)?;
        write_json(&self.artifact(REPORT), &report)?;
        let table = report.to_table();
        std::fs::write(self.artifact(REPORT_TABLE), &table)
            .map_err(|source| PipelineError::Io { path: self.artifact(REPORT_TABLE), source })?;
        Ok(json!({"table": table}))
    }

    /// Every stage in order; returns each stage's summary keyed by name.
    pub fn run(&self) -> Result<Value, PipelineError> {
        let mut out = serde_json::Map::new();
        out.insert("parse".into(), self.parse()?);
        out.insert("graph".into(), self.graph()?);
        out.insert("sample".into(), self.sample()?);
        out.insert("synth".into(), self.synth()?);
        out.insert("export".into(), self.export()?);
        out.insert("retrieve_eval".into(), self.retrieve_eval()?);
        out.insert("agent".into(), self.agent()?);
        out.insert("eval".into(), self.eval()?);
        Ok(Value::Object(out))
    }
}
