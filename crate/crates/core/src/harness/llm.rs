//! Chat-completion clients and the response cache in front of them.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::endpoint::{AttemptError, JsonEndpoint, RateLimiter, RetryPolicy};
use crate::error::{Error, Result};
use crate::store::{digest_fields, ContentStore};
use crate::types::{PromptMode, TaskKind};

use super::prompt::PromptSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl DecodingParams {
    pub const SHORT_MAX_TOKENS: u32 = 256;
    pub const LONG_MAX_TOKENS: u32 = 512;

    /// Greedy decoding; longer budget for free-form and chain-of-thought.
    pub fn for_prompt(task: TaskKind, mode: PromptMode) -> Self {
        let long = task == TaskKind::FreeForm || mode == PromptMode::WithContextCot;
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: if long {
                Self::LONG_MAX_TOKENS
            } else {
                Self::SHORT_MAX_TOKENS
            },
        }
    }
}

/// A chat model. `complete` returns the raw response JSON.
pub trait ChatModel: Send + Sync {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<Value>;
}

/// Text of the first choice of a chat-completion response.
pub fn response_text(response: &Value) -> Result<String> {
    response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Endpoint("response lacks choices[0].message.content".into()))
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpChat {
    endpoint: JsonEndpoint,
    model: String,
    retry: RetryPolicy,
    limiter: RateLimiter,
}

impl HttpChat {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        Self {
            endpoint: JsonEndpoint::new(url, api_key, timeout),
            model: model.to_string(),
            retry: RetryPolicy::default(),
            limiter: RateLimiter::per_minute(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = RateLimiter::per_minute(requests_per_minute);
        self
    }
}

impl ChatModel for HttpChat {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<Value> {
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        });
        let (response, _) = self.retry.run(self.endpoint.url(), |_| {
            self.limiter.acquire();
            let response = self.endpoint.post(&body)?;
            response_text(&response).map_err(|e| AttemptError::Fatal(e.to_string()))?;
            Ok(response)
        })?;
        Ok(response)
    }
}

/// Routes prompts to models by `llm_id` and caches raw responses under a
/// digest of `(llm_id, prompt, params)`.
pub struct LlmClient {
    models: BTreeMap<String, Arc<dyn ChatModel>>,
    disk: Option<ContentStore>,
    memory: RwLock<HashMap<String, Value>>,
    calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(models: BTreeMap<String, Arc<dyn ChatModel>>, disk: Option<ContentStore>) -> Self {
        Self {
            models,
            disk,
            memory: RwLock::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn llm_ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    /// Number of requests that reached a model.
    pub fn endpoint_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache_key(llm_id: &str, prompt: &str, params: &DecodingParams) -> String {
        let params = serde_json::to_string(params).expect("params serialize");
        digest_fields(&["chat", llm_id, prompt, &params])
    }

    pub fn query(&self, prompt: &PromptSpec, llm_id: &str, params: &DecodingParams) -> Result<String> {
        let model = self
            .models
            .get(llm_id)
            .ok_or_else(|| Error::Endpoint(format!("no endpoint configured for `{llm_id}`")))?;
        let key = Self::cache_key(llm_id, &prompt.rendered, params);
        if let Some(response) = self.lookup(&key)? {
            return response_text(&response);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = model.complete(&prompt.rendered, params)?;
        let text = response_text(&response)?;
        if let Some(disk) = &self.disk {
            disk.put(&key, &serde_json::to_vec(&response)?)?;
        }
        self.memory
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, response);
        Ok(text)
    }

    fn lookup(&self, key: &str) -> Result<Option<Value>> {
        if let Some(v) = self.memory.read().unwrap_or_else(|p| p.into_inner()).get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(disk) = &self.disk else { return Ok(None) };
        let Some(bytes) = disk.get(key)? else { return Ok(None) };
        match serde_json::from_slice::<Value>(&bytes) {
            Ok(v) => Ok(Some(v)),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {key}: {e}");
                Ok(None)
            }
        }
    }
}

/// Wraps a fixed reply in the chat-completion response shape.
pub fn chat_response(text: &str) -> Value {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": text } }] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::QaInstance;
    use crate::types::DatasetId;
    use std::sync::Mutex;

    struct Fixed(&'static str);

    impl ChatModel for Fixed {
        fn complete(&self, _: &str, _: &DecodingParams) -> Result<Value> {
            Ok(chat_response(self.0))
        }
    }

    fn prompt() -> PromptSpec {
        let inst = QaInstance {
            instance_id: "i".into(),
            dataset_id: DatasetId::Squad11,
            question: "q?".into(),
            titles: vec!["T".into()],
            paragraphs: BTreeMap::new(),
            gold_titles: vec![],
            gold_answers: vec!["a".into()],
        };
        super::super::build_prompt(&inst, Some("p"), PromptMode::WithContext).unwrap()
    }

    #[test]
    fn decoding_defaults() {
        let p = DecodingParams::for_prompt(TaskKind::Extractive, PromptMode::WithContext);
        assert_eq!((p.temperature, p.top_p, p.max_tokens), (0.0, 1.0, 256));
        assert_eq!(DecodingParams::for_prompt(TaskKind::FreeForm, PromptMode::WithContext).max_tokens, 512);
        assert_eq!(DecodingParams::for_prompt(TaskKind::YesNo, PromptMode::WithContextCot).max_tokens, 512);
    }

    #[test]
    fn warm_cache_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let models: BTreeMap<String, Arc<dyn ChatModel>> =
            BTreeMap::from([("m".to_string(), Arc::new(Fixed("Paris")) as Arc<dyn ChatModel>)]);
        let params = DecodingParams::for_prompt(TaskKind::Extractive, PromptMode::WithContext);
        let cold = LlmClient::new(models.clone(), Some(ContentStore::open(dir.path()).unwrap()));
        assert_eq!(cold.query(&prompt(), "m", &params).unwrap(), "Paris");
        assert_eq!(cold.query(&prompt(), "m", &params).unwrap(), "Paris");
        assert_eq!(cold.endpoint_calls(), 1);
        let warm = LlmClient::new(models, Some(ContentStore::open(dir.path()).unwrap()));
        assert_eq!(warm.query(&prompt(), "m", &params).unwrap(), "Paris");
        assert_eq!(warm.endpoint_calls(), 0);
        assert!(warm.query(&prompt(), "other", &params).is_err());
    }

    #[test]
    fn cache_key_depends_on_every_part() {
        let p = DecodingParams::for_prompt(TaskKind::Extractive, PromptMode::WithContext);
        let mut q = p;
        q.max_tokens = 512;
        let base = LlmClient::cache_key("m", "x", &p);
        assert_ne!(base, LlmClient::cache_key("n", "x", &p));
        assert_ne!(base, LlmClient::cache_key("m", "y", &p));
        assert_ne!(base, LlmClient::cache_key("m", "x", &q));
    }

    #[test]
    fn http_chat_retries_transient_failures() {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&bodies);
        let server = std::thread::spawn(move || {
            for (i, stream) in listener.incoming().take(3).enumerate() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                seen.lock().unwrap().push(String::from_utf8(body).unwrap());
                let (status, payload) = if i < 2 {
                    ("503 Service Unavailable", "{}".to_string())
                } else {
                    ("200 OK", chat_response("ok").to_string())
                };
                write!(
                    stream,
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                )
                .unwrap();
            }
        });
        let chat = HttpChat::new(&format!("http://{addr}/v1"), "gpt-x", None, Duration::from_secs(5))
            .with_retry(RetryPolicy::no_delay(5));
        let params = DecodingParams::for_prompt(TaskKind::Extractive, PromptMode::WithContext);
        let response = chat.complete("hello", &params).unwrap();
        assert_eq!(response_text(&response).unwrap(), "ok");
        server.join().unwrap();
        let bodies = bodies.lock().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "gpt-x");
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert_eq!(sent["temperature"], 0.0);
    }
}
