//! Chat-completion client with JSON-schema structured output.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    render_repair, system_prompt, BackendError, Segmenter, SegmenterRequest, SegmenterResponse,
    REPAIR_PROMPT,
};

pub const ENV_ENDPOINT: &str = "SQLSEG_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "SQLSEG_LLM_API_KEY";
pub const ENV_MODEL: &str = "SQLSEG_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
    /// Requests allowed in flight at once.
    pub max_concurrency: usize,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            max_concurrency: 4,
        }
    }

    /// Reads `SQLSEG_LLM_ENDPOINT`, `SQLSEG_LLM_API_KEY` and
    /// `SQLSEG_LLM_MODEL`; `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .ok()
            .filter(|s| !s.trim().is_empty())?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        let mut cfg = LlmConfig::new(endpoint, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore") += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmClient {
    config: LlmConfig,
    http: reqwest::blocking::Client,
    slots: Semaphore,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let slots = Semaphore {
            free: Mutex::new(config.max_concurrency.max(1)),
            cv: Condvar::new(),
        };
        Ok(LlmClient {
            config,
            http,
            slots,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &SegmenterRequest) -> Value {
        let mut user = request.fragment.clone();
        if let Some(failure) = &request.prior_failure {
            user = render_repair(REPAIR_PROMPT, failure, request);
        }
        json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system_prompt(&request.dialect)},
                {"role": "user", "content": user},
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": request.schema.name,
                    "strict": true,
                    "schema": request.schema.to_json_schema(),
                },
            },
        })
    }

    fn send(&self, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Transport(format!(
                "HTTP {status}"
            ))));
        }
        resp.json()
            .map_err(|e| Attempt::Fatal(BackendError::Transport(format!("bad response body: {e}"))))
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

/// Decodes the structured content of a chat-completion response.
pub fn decode_completion(
    request: &SegmenterRequest,
    body: &Value,
) -> Result<SegmenterResponse, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Schema("response has no message content".into()))?;
    let value: Value = serde_json::from_str(content)
        .map_err(|e| BackendError::Schema(format!("content is not JSON: {e}")))?;
    request.schema.decode(&value)
}

impl Segmenter for LlmClient {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        let body = self.request_body(request);
        let _permit = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            match self.send(&body) {
                Ok(v) => return decode_completion(request, &v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(BackendError::Transport(format!(
            "gave up after {} attempts: {last}",
            self.config.max_retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ExprSegments;
    use crate::grammar::GrammarRuleId;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves the given `(status, body)` replies in order and returns the
    /// received request bodies.
    fn fake_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<Value>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(serde_json::from_slice(&buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn completion(content: &Value) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content.to_string()}}]})
            .to_string()
    }

    fn config(url: String) -> LlmConfig {
        let mut cfg = LlmConfig::new(url, "test-model");
        cfg.backoff = Duration::from_millis(1);
        cfg
    }

    #[test]
    fn sends_schema_and_decodes() {
        let content = json!({"literal": null, "operator": "!<", "operands": ["a", "1"]});
        let (url, server) = fake_server(vec![(200, completion(&content))]);
        let client = LlmClient::new(config(url)).unwrap();
        let req = SegmenterRequest::expression("a !< 1", "SELECT a !< 1", "tsql");
        let resp = client.segment(&req).unwrap();
        assert_eq!(
            resp,
            SegmenterResponse::Expression(ExprSegments::operation("!<", &["a", "1"]))
        );
        let sent = server.join().unwrap();
        assert_eq!(sent[0]["temperature"], 0);
        assert_eq!(sent[0]["response_format"]["json_schema"]["strict"], true);
        assert_eq!(sent[0]["messages"][1]["content"], "a !< 1");
        assert!(sent[0]["messages"][0]["content"]
            .as_str()
            .unwrap()
            .contains("tsql"));
    }

    #[test]
    fn retries_server_errors() {
        let content = json!({"condition": "x = 1"});
        let (url, server) = fake_server(vec![(503, "{}".into()), (200, completion(&content))]);
        let client = LlmClient::new(config(url)).unwrap();
        let req = SegmenterRequest::clause(GrammarRuleId::WhereClause, "x = 1", "x = 1", "");
        assert!(client.segment(&req).is_ok());
        assert_eq!(server.join().unwrap().len(), 2);
    }

    #[test]
    fn client_errors_are_transport_failures() {
        let (url, server) = fake_server(vec![(401, "{}".into())]);
        let client = LlmClient::new(config(url)).unwrap();
        let req = SegmenterRequest::expression("a", "a", "");
        assert!(client.segment(&req).unwrap_err().is_transport());
        server.join().unwrap();
    }

    #[test]
    fn undecodable_content_is_a_schema_error() {
        let content = json!({"bogus": 1});
        let (url, server) = fake_server(vec![(200, completion(&content))]);
        let client = Arc::new(LlmClient::new(config(url)).unwrap());
        let req = SegmenterRequest::expression("a", "a", "");
        assert!(matches!(client.segment(&req), Err(BackendError::Schema(_))));
        server.join().unwrap();
    }
}
