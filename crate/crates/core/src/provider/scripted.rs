use super::{CacheKey, ChatProvider, ChatRequest, ChatResponse, ProviderError};
use crate::prompts::PromptId;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

pub const SCRIPTED_PROVIDER_ID: &str = "scripted";

/// Rule-based fallback consulted when no fixture matches.
pub trait Responder: Send + Sync {
    fn respond(&self, request: &ChatRequest) -> Option<String>;
}

impl<F> Responder for F
where
    F: Fn(&ChatRequest) -> Option<String> + Send + Sync,
{
    fn respond(&self, request: &ChatRequest) -> Option<String> {
        self(request)
    }
}

/// A canned reply.
///
/// A fixture with a `digest` matches exactly that request. Otherwise it is a
/// matcher: every present condition must hold against the request's last
/// user message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<CacheKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<PromptId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub text: String,
}

impl Fixture {
    pub fn for_digest(digest: CacheKey, text: impl Into<String>) -> Self {
        Self { digest: Some(digest), text: text.into(), ..Self::default() }
    }

    pub fn for_prompt(prompt_id: PromptId, text: impl Into<String>) -> Self {
        Self { prompt_id: Some(prompt_id), text: text.into(), ..Self::default() }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn with_user_equals(mut self, payload: impl Into<String>) -> Self {
        self.user_equals = Some(payload.into());
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        if self.prompt_id.is_some_and(|p| p != request.prompt_id) {
            return false;
        }
        let payload = request.user_payload().unwrap_or("");
        if self.user_equals.as_deref().is_some_and(|u| u != payload) {
            return false;
        }
        self.contains.iter().all(|needle| payload.contains(needle.as_str()))
    }
}

/// Fixture file layout: `{"fixtures": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureSet {
    pub fixtures: Vec<Fixture>,
}

impl FixtureSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(raw).map_err(|e| ProviderError::InvalidRequest(format!("fixture file: {e}")))
    }

    pub fn extend(&mut self, other: FixtureSet) {
        self.fixtures.extend(other.fixtures);
    }
}

/// Deterministic provider that answers from fixtures and never touches the
/// network. Lookup order: exact digest, matchers in declaration order, then
/// the responder unless `strict` is set.
pub struct ScriptedProvider {
    by_digest: HashMap<CacheKey, String>,
    matchers: Vec<Fixture>,
    responder: Option<Arc<dyn Responder>>,
    strict: bool,
}

impl ScriptedProvider {
    pub fn new(fixtures: FixtureSet) -> Self {
        let (digests, matchers): (Vec<_>, Vec<_>) =
            fixtures.fixtures.into_iter().partition(|f| f.digest.is_some());
        let by_digest = digests
            .into_iter()
            .map(|f| (f.digest.expect("partitioned on digest"), f.text))
            .collect();
        Self { by_digest, matchers, responder: None, strict: true }
    }

    pub fn empty() -> Self {
        Self::new(FixtureSet::default())
    }

    /// Installs a fallback responder and switches to lenient mode.
    pub fn with_responder(mut self, responder: Arc<dyn Responder>) -> Self {
        self.responder = Some(responder);
        self.strict = false;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn key_for(request: &ChatRequest) -> CacheKey {
        CacheKey::for_request(SCRIPTED_PROVIDER_ID, request)
    }
}

impl ChatProvider for ScriptedProvider {
    fn id(&self) -> &str {
        SCRIPTED_PROVIDER_ID
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let key = Self::key_for(request);
        let text = self
            .by_digest
            .get(&key)
            .cloned()
            .or_else(|| self.matchers.iter().find(|f| f.matches(request)).map(|f| f.text.clone()))
            .or_else(|| {
                if self.strict {
                    None
                } else {
                    self.responder.as_ref().and_then(|r| r.respond(request))
                }
            });
        match text {
            Some(text) => Ok(ChatResponse { text, cached: false, key }),
            None => Err(ProviderError::ScriptMiss { prompt_id: request.prompt_id, digest: key }),
        }
    }
}
