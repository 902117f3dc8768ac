pub mod json_util;
pub mod prompts;
pub mod provider;
pub mod api_spec;
pub mod tool_env;
pub mod dep_graph;
pub mod sim;
pub mod sampler;
pub mod synth;
pub mod dataset_io;
pub mod retriever;
pub mod agent;
pub mod eval;
pub mod config;
pub mod pipeline;
