//! Registered prompt templates.
//!
//! Every chat request carries a [`PromptId`]. The system message is the
//! template text and the user message is the compact JSON payload the
//! template describes.

use crate::provider::{ChatRequest, Message};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;

/// Appended as an extra user turn when a reply could not be parsed.
pub const JSON_REMINDER: &str =
    "Your previous reply could not be parsed. Return only JSON: the dictionary requested above and nothing else.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    ParseDocument,
    LlmFilter,
    EdgeFirstCall,
    EdgeSubsequentCall,
    CallFilter,
    MakeFirstCall,
    MakeCallStep1,
    MakeCallStep2,
    SubInstruction,
    UserQuery,
    FinalResponse,
    SuccessRate,
    AgentGlobalPlan,
    AgentCallArgs,
    AgentReactStep,
    AgentDecomposeStep,
    AgentDecomposePlan,
    AgentSelectCall,
    AgentFinalAnswer,
}

impl PromptId {
    pub const ALL: [PromptId; 19] = [
        PromptId::ParseDocument,
        PromptId::LlmFilter,
        PromptId::EdgeFirstCall,
        PromptId::EdgeSubsequentCall,
        PromptId::CallFilter,
        PromptId::MakeFirstCall,
        PromptId::MakeCallStep1,
        PromptId::MakeCallStep2,
        PromptId::SubInstruction,
        PromptId::UserQuery,
        PromptId::FinalResponse,
        PromptId::SuccessRate,
        PromptId::AgentGlobalPlan,
        PromptId::AgentCallArgs,
        PromptId::AgentReactStep,
        PromptId::AgentDecomposeStep,
        PromptId::AgentDecomposePlan,
        PromptId::AgentSelectCall,
        PromptId::AgentFinalAnswer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::ParseDocument => "parse_document",
            PromptId::LlmFilter => "llm_filter",
            PromptId::EdgeFirstCall => "edge_first_call",
            PromptId::EdgeSubsequentCall => "edge_subsequent_call",
            PromptId::CallFilter => "call_filter",
            PromptId::MakeFirstCall => "make_first_call",
            PromptId::MakeCallStep1 => "make_call_step1",
            PromptId::MakeCallStep2 => "make_call_step2",
            PromptId::SubInstruction => "sub_instruction",
            PromptId::UserQuery => "user_query",
            PromptId::FinalResponse => "final_response",
            PromptId::SuccessRate => "success_rate",
            PromptId::AgentGlobalPlan => "agent_global_plan",
            PromptId::AgentCallArgs => "agent_call_args",
            PromptId::AgentReactStep => "agent_react_step",
            PromptId::AgentDecomposeStep => "agent_decompose_step",
            PromptId::AgentDecomposePlan => "agent_decompose_plan",
            PromptId::AgentSelectCall => "agent_select_call",
            PromptId::AgentFinalAnswer => "agent_final_answer",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptId::ParseDocument => include_str!("../prompts/parse_document.txt"),
            PromptId::LlmFilter => include_str!("../prompts/llm_filter.txt"),
            PromptId::EdgeFirstCall => include_str!("../prompts/edge_first_call.txt"),
            PromptId::EdgeSubsequentCall => include_str!("../prompts/edge_subsequent_call.txt"),
            PromptId::CallFilter => include_str!("../prompts/call_filter.txt"),
            PromptId::MakeFirstCall => include_str!("../prompts/make_first_call.txt"),
            PromptId::MakeCallStep1 => include_str!("../prompts/make_call_step1.txt"),
            PromptId::MakeCallStep2 => include_str!("../prompts/make_call_step2.txt"),
            PromptId::SubInstruction => include_str!("../prompts/sub_instruction.txt"),
            PromptId::UserQuery => include_str!("../prompts/user_query.txt"),
            PromptId::FinalResponse => include_str!("../prompts/final_response.txt"),
            PromptId::SuccessRate => include_str!("../prompts/success_rate.v1.txt"),
            PromptId::AgentGlobalPlan => include_str!("../prompts/agent_global_plan.txt"),
            PromptId::AgentCallArgs => include_str!("../prompts/agent_call_args.txt"),
            PromptId::AgentReactStep => include_str!("../prompts/agent_react_step.txt"),
            PromptId::AgentDecomposeStep => include_str!("../prompts/agent_decompose_step.txt"),
            PromptId::AgentDecomposePlan => include_str!("../prompts/agent_decompose_plan.txt"),
            PromptId::AgentSelectCall => include_str!("../prompts/agent_select_call.txt"),
            PromptId::AgentFinalAnswer => include_str!("../prompts/agent_final_answer.txt"),
        }
    }

    /// Template file version; bumped whenever a template's bytes change.
    pub fn template_version(self) -> u32 {
        1
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Compact, key-sorted rendering used for every user payload.
pub fn render_payload(payload: &Value) -> String {
    serde_json::to_string(payload).expect("json values always serialize")
}

/// `[system: template, user: payload]` at temperature 0.
pub fn request(prompt: PromptId, payload: &Value) -> ChatRequest {
    ChatRequest::new(
        prompt,
        vec![
            Message::system(prompt.template()),
            Message::user(render_payload(payload)),
        ],
        0.0,
    )
    .expect("two-message request is well formed")
}
