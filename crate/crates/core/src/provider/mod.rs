//! Chat-completion and embedding providers.
//!
//! A [`ChatProvider`] turns a [`ChatRequest`] into text. Implementations:
//! [`OpenAiChat`] (HTTP, OpenAI-compatible), [`ScriptedProvider`] (fixtures,
//! no I/O) and [`CachedProvider`], which wraps either with a write-once,
//! content-addressed response cache.

mod cache;
mod embed;
pub mod http;
mod openai;
mod reply;
mod scripted;

pub use cache::{CacheEntry, CachedProvider, ResponseCache};
pub use embed::{cosine, Embedder, EmbeddingVector, TrigramEmbedder, TRIGRAM_BUCKETS};
pub use openai::{OpenAiChat, OpenAiEmbedder};
pub use reply::parse_json_reply;
pub use scripted::{Fixture, FixtureSet, Responder, ScriptedProvider};

use crate::prompts::{PromptId, JSON_REMINDER};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no scripted fixture for {prompt_id} request {digest}")]
    ScriptMiss { prompt_id: PromptId, digest: CacheKey },
    #[error("could not recover a JSON object from reply: {0}")]
    Format(String),
    #[error("cache already holds a different response for {0}")]
    CacheConflict(CacheKey),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt_id: PromptId,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(
        prompt_id: PromptId,
        messages: Vec<Message>,
        temperature: f64,
    ) -> Result<Self, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {temperature}"
            )));
        }
        Ok(Self { prompt_id, messages, temperature })
    }

    /// Content of the last user turn, if any.
    pub fn user_payload(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Copy with one more user turn.
    pub fn with_user_turn(&self, content: &str) -> Self {
        let mut next = self.clone();
        next.messages.push(Message::user(content));
        next
    }
}

/// SHA-256 over `(provider id, canonical request JSON)`, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn for_request(provider_id: &str, request: &ChatRequest) -> Self {
        let request = serde_json::to_value(request).expect("requests always serialize");
        let canonical = serde_json::to_string(&json!({ "provider": provider_id, "request": request }))
            .expect("json values always serialize");
        CacheKey(hex::encode(Sha256::digest(canonical.as_bytes())))
    }

    pub fn from_hex(hex: impl Into<String>) -> Self {
        CacheKey(hex.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub cached: bool,
    pub key: CacheKey,
}

pub trait ChatProvider: Send + Sync {
    /// Stable identifier mixed into every cache key.
    fn id(&self) -> &str;

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(request)
    }
}

/// One provider round-trip, in issue order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTrace {
    pub prompt_id: PromptId,
    pub digest: CacheKey,
}

/// Provider handle that records every request it issues.
pub struct Session<'a> {
    provider: &'a dyn ChatProvider,
    trace: Vec<PromptTrace>,
}

impl<'a> Session<'a> {
    pub fn new(provider: &'a dyn ChatProvider) -> Self {
        Self { provider, trace: Vec::new() }
    }

    pub fn chat(&mut self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.provider.chat(request)?;
        self.trace.push(PromptTrace { prompt_id: request.prompt_id, digest: response.key.clone() });
        Ok(response)
    }

    /// Chat and parse a JSON object out of the reply. A reply that cannot be
    /// parsed gets exactly one follow-up turn asking for JSON only.
    pub fn chat_json(&mut self, request: &ChatRequest) -> Result<Value, ProviderError> {
        let first = self.chat(request)?;
        match parse_json_reply(&first.text) {
            Ok(v) => Ok(v),
            Err(_) => {
                let retry = request
                    .with_user_turn_after(&first.text, JSON_REMINDER);
                let second = self.chat(&retry)?;
                parse_json_reply(&second.text)
            }
        }
    }

    pub fn trace(&self) -> &[PromptTrace] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<PromptTrace> {
        self.trace
    }
}

impl ChatRequest {
    /// Copy extended with the assistant's previous reply and a new user turn.
    pub fn with_user_turn_after(&self, assistant_reply: &str, content: &str) -> Self {
        let mut next = self.clone();
        next.messages.push(Message::assistant(assistant_reply));
        next.messages.push(Message::user(content));
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts;

    #[test]
    fn empty_messages_are_rejected() {
        assert!(matches!(
            ChatRequest::new(PromptId::UserQuery, vec![], 0.0),
            Err(ProviderError::InvalidRequest(_))
        ));
        assert!(ChatRequest::new(PromptId::UserQuery, vec![Message::user("x")], -1.0).is_err());
    }

    #[test]
    fn cache_key_ignores_payload_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": 2, "x": 3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": {"x": 3, "y": 2}, "b": 1}"#).unwrap();
        let ka = CacheKey::for_request("p", &prompts::request(PromptId::UserQuery, &a));
        let kb = CacheKey::for_request("p", &prompts::request(PromptId::UserQuery, &b));
        assert_eq!(ka, kb);
        let kc = CacheKey::for_request("q", &prompts::request(PromptId::UserQuery, &a));
        assert_ne!(ka, kc);
        assert_eq!(ka.as_str().len(), 64);
    }
}
