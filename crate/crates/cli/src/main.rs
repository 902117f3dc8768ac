use clap::{Parser, Subcommand};
use goat_core::config::{ConfigError, PipelineConfig, ProviderKind};
use goat_core::pipeline::{Pipeline, PipelineError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "goat", version, about = "Build API dependency graphs, synthesize tool-use datasets and evaluate agents")]
struct Cli {
    /// TOML pipeline config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Embedding-filter threshold in [-1, 1].
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Largest subgraph size to sample.
    #[arg(long, global = true)]
    max_nodes: Option<usize>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Reject unknown fields when reading datasets.
    #[arg(long, global = true)]
    strict: bool,
    /// Agent to run: global, react, react_decomposer or global_decomposer.
    #[arg(long, global = true)]
    agent: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Chat backend: sim, replay or openai.
    #[arg(long, global = true, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Extract parameter and output descriptions from the corpus.
    Parse,
    /// Build the dependency graph and run the three edge filters.
    Graph,
    /// Enumerate connected subgraphs into ordered tasks.
    Sample,
    /// Synthesize samples from the tasks.
    Synth,
    /// Write SFT records, retriever pairs and the document index.
    Export,
    /// Retrieval recall over the samples.
    RetrieveEval,
    /// Run an agent over the sample queries.
    Agent,
    /// Score trajectories against the samples.
    Eval,
    /// Every stage in order.
    Run,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "sim" => Ok(ProviderKind::Sim),
        "replay" => Ok(ProviderKind::Replay),
        "openai" => Ok(ProviderKind::Openai),
        other => Err(format!("unknown provider '{other}' (expected sim, replay or openai)")),
    }
}

impl Cli {
    fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.max_nodes {
            c.max_nodes = v;
        }
        if let Some(v) = self.top_k {
            c.top_k = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = &self.agent {
            c.agent = v.clone();
        }
        if let Some(v) = &self.out_dir {
            c.paths.out_dir = v.clone();
        }
        if let Some(v) = self.provider {
            c.provider.kind = v;
        }
        c.strict |= self.strict;
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, PipelineError> {
    let pipeline = Pipeline::new(cli.pipeline_config()?)?;
    log::info!("running {:?} into {}", cli.command, pipeline.config().paths.out_dir.display());
    match cli.command {
        Command::Parse => pipeline.parse(),
        Command::Graph => pipeline.graph(),
        Command::Sample => pipeline.sample(),
        Command::Synth => pipeline.synth(),
        Command::Export => pipeline.export(),
        Command::RetrieveEval => pipeline.retrieve_eval(),
        Command::Agent => pipeline.agent(),
        Command::Eval => pipeline.eval(),
        Command::Run => pipeline.run(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summaries serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
