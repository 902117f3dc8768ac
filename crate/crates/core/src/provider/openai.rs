use super::http::{HttpRequest, Transport};
use super::{CacheKey, ChatProvider, ChatRequest, ChatResponse, Embedder, EmbeddingVector, ProviderError};
use serde_json::{json, Value};
use std::sync::Arc;

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "GOAT_API_KEY";

/// OpenAI-compatible `/chat/completions` client.
pub struct OpenAiChat {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    max_retries: u32,
    id: String,
}

impl OpenAiChat {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        let model = model.into();
        let id = format!("openai:{model}@{endpoint}");
        Self { endpoint, model, api_key: std::env::var(API_KEY_ENV).ok(), transport, max_retries: 2, id }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    fn body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": request.messages,
        })
    }
}

fn post_with_retry(
    transport: &dyn Transport,
    request: &HttpRequest,
    max_retries: u32,
) -> Result<Value, ProviderError> {
    let mut last = String::new();
    for attempt in 0..=max_retries {
        match transport.send(request) {
            Ok(resp) if resp.is_success() => {
                return serde_json::from_str(&resp.body)
                    .map_err(|e| ProviderError::Transport(format!("malformed response body: {e}")));
            }
            Ok(resp) => {
                last = format!("HTTP {}: {}", resp.status, resp.body);
                let retryable = resp.status == 429 || resp.status >= 500;
                if !retryable {
                    break;
                }
            }
            Err(e) => last = e.0,
        }
        log::warn!("provider request attempt {} failed: {last}", attempt + 1);
    }
    Err(ProviderError::Transport(last))
}

fn authorized(mut req: HttpRequest, key: &Option<String>) -> HttpRequest {
    if let Some(key) = key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    req
}

impl ChatProvider for OpenAiChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let http = authorized(
            HttpRequest::new("POST", format!("{}/chat/completions", self.endpoint)).json(self.body(request)),
            &self.api_key,
        );
        let reply = post_with_retry(self.transport.as_ref(), &http, self.max_retries)?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ProviderError::Transport("response carries no message content".into()))?;
        Ok(ChatResponse { text: text.to_string(), cached: false, key: CacheKey::for_request(&self.id, request) })
    }
}

/// OpenAI-compatible `/embeddings` client; vectors are L2-normalized on receipt.
pub struct OpenAiEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
    transport: Arc<dyn Transport>,
}

impl OpenAiEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            dimension,
            transport,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

impl Embedder for OpenAiEmbedder {
    fn fingerprint(&self) -> String {
        format!("openai:{}@{}/{}", self.model, self.endpoint, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        let http = authorized(
            HttpRequest::new("POST", format!("{}/embeddings", self.endpoint))
                .json(json!({ "model": self.model, "input": text })),
            &self.api_key,
        );
        let reply = post_with_retry(self.transport.as_ref(), &http, 2)?;
        let raw: Vec<f64> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| ProviderError::Transport("response carries no embedding".into()))?;
        if raw.len() != self.dimension {
            return Err(ProviderError::Transport(format!(
                "embedding has dimension {}, expected {}",
                raw.len(),
                self.dimension
            )));
        }
        EmbeddingVector::normalized(raw)
            .ok_or_else(|| ProviderError::Transport("provider returned a zero embedding".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{self, PromptId};
    use crate::provider::http::{HttpResponse, TransportError};
    use std::sync::Mutex;

    struct Canned {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        seen: Mutex<Vec<HttpRequest>>,
    }

    impl Canned {
        fn new(mut replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self { replies: Mutex::new(replies), seen: Mutex::new(Vec::new()) })
        }
    }

    impl Transport for Canned {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies.lock().unwrap().pop().expect("unexpected extra request")
        }
    }

    fn ok(body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, content_type: None, body: body.to_string() })
    }

    #[test]
    fn chat_sends_model_messages_and_bearer() {
        let t = Canned::new(vec![ok(r#"{"choices":[{"message":{"content":"{\"a\":1}"}}]}"#)]);
        let p = OpenAiChat::new("http://h/v1/", "llama", t.clone()).with_api_key(Some("k".into()));
        let req = prompts::request(PromptId::UserQuery, &json!({"x": 1}));
        let resp = p.chat(&req).unwrap();
        assert_eq!(resp.text, "{\"a\":1}");
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].url, "http://h/v1/chat/completions");
        assert!(seen[0].headers.contains(&("Authorization".into(), "Bearer k".into())));
        let body = seen[0].body.as_ref().unwrap();
        assert_eq!(body["model"], "llama");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn server_errors_are_retried_then_surface_as_transport_errors() {
        let t = Canned::new(vec![
            Ok(HttpResponse { status: 503, content_type: None, body: "busy".into() }),
            Err(TransportError("reset".into())),
            Ok(HttpResponse { status: 500, content_type: None, body: "boom".into() }),
        ]);
        let p = OpenAiChat::new("http://h", "m", t.clone()).with_api_key(None);
        let err = p.chat(&prompts::request(PromptId::UserQuery, &json!({}))).unwrap_err();
        assert!(matches!(err, ProviderError::Transport(ref m) if m.contains("boom")), "{err}");
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Canned::new(vec![Ok(HttpResponse { status: 401, content_type: None, body: "no".into() })]);
        let p = OpenAiChat::new("http://h", "m", t.clone()).with_api_key(None);
        assert!(p.chat(&prompts::request(PromptId::UserQuery, &json!({}))).is_err());
        assert_eq!(t.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn embeddings_are_normalized() {
        let t = Canned::new(vec![ok(r#"{"data":[{"embedding":[3.0, 4.0]}]}"#)]);
        let e = OpenAiEmbedder::new("http://h", "mini", 2, t).with_api_key(None);
        let v = e.embed("abc").unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}
