//! Minimal blocking HTTP seam shared by the OpenAI-compatible provider and
//! the REST executor. Tests substitute their own [`Transport`].

use serde_json::Value;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub query: Vec<(String, String)>,
    pub body: Option<Value>,
}

impl HttpRequest {
    pub fn new(method: impl Into<String>, url: impl Into<String>) -> Self {
        Self { method: method.into(), url: url.into(), headers: Vec::new(), query: Vec::new(), body: None }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn json(mut self, body: Value) -> Self {
        self.body = Some(body);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: String,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub trait Transport: Send + Sync {
    /// Non-2xx statuses are returned as responses, not errors.
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

/// [`Transport`] backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let err = |e: ureq::Error| TransportError(format!("{} {}: {e}", request.method, request.url));
        let method = request.method.to_ascii_uppercase();
        let mut response = match method.as_str() {
            "GET" | "DELETE" | "HEAD" => {
                let mut builder = match method.as_str() {
                    "GET" => self.agent.get(&request.url),
                    "DELETE" => self.agent.delete(&request.url),
                    _ => self.agent.head(&request.url),
                };
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                for (k, v) in &request.query {
                    builder = builder.query(k, v);
                }
                builder.call().map_err(err)?
            }
            "POST" | "PUT" | "PATCH" => {
                let mut builder = match method.as_str() {
                    "POST" => self.agent.post(&request.url),
                    "PUT" => self.agent.put(&request.url),
                    _ => self.agent.patch(&request.url),
                };
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                for (k, v) in &request.query {
                    builder = builder.query(k, v);
                }
                match &request.body {
                    Some(body) => builder.send_json(body).map_err(err)?,
                    None => builder.send_empty().map_err(err)?,
                }
            }
            other => return Err(TransportError(format!("unsupported HTTP method {other}"))),
        };
        let status = response.status().as_u16();
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response.body_mut().read_to_string().map_err(err)?;
        Ok(HttpResponse { status, content_type, body })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn serve_once(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0u8; content_length];
            reader.read_exact(&mut body_in).unwrap();
            let reply = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body_in).unwrap()
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn ureq_transport_reports_status_without_erroring() {
        let (base, server) = serve_once("404 Not Found", r#"{"status_message":"nope"}"#);
        let t = UreqTransport::new(Duration::from_secs(5));
        let mut req = HttpRequest::new("GET", format!("{base}/movie/1"));
        req.query.push(("language".into(), "en US".into()));
        let resp = t.send(&req).unwrap();
        assert_eq!(resp.status, 404);
        assert!(resp.body.contains("nope"));
        let seen = server.join().unwrap();
        assert!(seen.starts_with("GET /movie/1?language=en"), "{seen}");
    }

    #[test]
    fn ureq_transport_posts_json() {
        let (base, server) = serve_once("200 OK", r#"{"ok":true}"#);
        let t = UreqTransport::new(Duration::from_secs(5));
        let req = HttpRequest::new("POST", format!("{base}/x")).json(serde_json::json!({"a": 1}));
        let resp = t.send(&req).unwrap();
        assert!(resp.is_success());
        assert_eq!(resp.content_type.as_deref(), Some("application/json"));
        let seen = server.join().unwrap();
        let (_, body) = seen.split_once("\r\n\r\n").unwrap();
        assert_eq!(serde_json::from_str::<Value>(body).unwrap(), serde_json::json!({"a": 1}));
    }
}
