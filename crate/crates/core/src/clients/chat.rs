//! Provider-agnostic multimodal chat completion.

use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::transport::{HttpRequest, HttpResponse, Transport, TransportError};
use super::ClientError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub mime: String,
    pub bytes: Vec<u8>,
}

impl ImageAttachment {
    pub fn jpeg(bytes: Vec<u8>) -> Self {
        Self { mime: "image/jpeg".into(), bytes }
    }

    fn base64(&self) -> String {
        B64.encode(&self.bytes)
    }
}

impl std::fmt::Debug for ImageAttachment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageAttachment({}, {} bytes)", self.mime, self.bytes.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub images: Vec<ImageAttachment>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), images: Vec::new() }
    }

    pub fn user(text: impl Into<String>, images: Vec<ImageAttachment>) -> Self {
        Self { role: Role::User, text: text.into(), images }
    }
}

/// Sampling controls. Unset fields are left to the provider's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
    pub presence_penalty: Option<f64>,
    pub frequency_penalty: Option<f64>,
    pub repeat_penalty: Option<f64>,
    pub repeat_last_n: Option<i32>,
    /// `-1` means unbounded where the provider supports it.
    pub max_output_tokens: Option<i64>,
    pub candidate_count: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: None,
            top_p: None,
            top_k: None,
            presence_penalty: None,
            frequency_penalty: None,
            repeat_penalty: None,
            repeat_last_n: None,
            max_output_tokens: None,
            candidate_count: 1,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: String| Err(ClientError::InvalidRequest(m));
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("temperature {t} outside [0, 2]"));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("top_p {p} outside (0, 1]"));
            }
        }
        if self.top_k == Some(0) {
            return bad("top_k must be at least 1".into());
        }
        for (name, v) in [("presence_penalty", self.presence_penalty), ("frequency_penalty", self.frequency_penalty)] {
            if let Some(v) = v {
                if !(-2.0..=2.0).contains(&v) {
                    return bad(format!("{name} {v} outside [-2, 2]"));
                }
            }
        }
        if let Some(r) = self.repeat_penalty {
            if !(r > 0.0) {
                return bad(format!("repeat_penalty {r} must be positive"));
            }
        }
        if let Some(n) = self.repeat_last_n {
            if n < -1 {
                return bad(format!("repeat_last_n {n} below -1"));
            }
        }
        if let Some(m) = self.max_output_tokens {
            if m == 0 || m < -1 {
                return bad(format!("max_output_tokens {m} must be positive or -1"));
            }
        }
        if self.candidate_count != 1 {
            return bad(format!("candidate_count must be 1, got {}", self.candidate_count));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.model.trim().is_empty() {
            return Err(ClientError::InvalidRequest("model name is empty".into()));
        }
        if self.messages.is_empty() {
            return Err(ClientError::InvalidRequest("no messages".into()));
        }
        self.params.validate()
    }

    /// Concatenated text of all user turns; handy for inspection in tests.
    pub fn user_text(&self) -> String {
        self.messages.iter().filter(|m| m.role == Role::User).map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(|m| m.images.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Failed attempts before the one that succeeded.
    pub retry_count: u32,
}

pub trait ChatClient: Send + Sync {
    /// Model name to put in requests.
    fn model(&self) -> &str;
    fn params(&self) -> GenerationParams {
        GenerationParams::default()
    }
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError>;
}

impl<C: ChatClient + ?Sized> ChatClient for Arc<C> {
    fn model(&self) -> &str {
        (**self).model()
    }
    fn params(&self) -> GenerationParams {
        (**self).params()
    }
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        (**self).chat(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderKind {
    #[serde(rename = "openai")]
    OpenAi,
    #[serde(rename = "gemini")]
    Gemini,
    #[serde(rename = "ollama")]
    Ollama,
}

/// Everything needed to talk to one hosted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub kind: ProviderKind,
    pub model: String,
    /// `{model}` is substituted with the model name.
    pub endpoint: String,
    /// Environment variable holding the API key; `None` for keyless servers.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub params: GenerationParams,
}

impl ProviderProfile {
    pub fn openai(model: &str) -> Self {
        Self {
            kind: ProviderKind::OpenAi,
            model: model.into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            params: GenerationParams {
                temperature: Some(1.0),
                top_p: Some(1.0),
                presence_penalty: Some(0.0),
                frequency_penalty: Some(0.0),
                max_output_tokens: Some(8000),
                ..GenerationParams::default()
            },
        }
    }

    pub fn gemini(model: &str) -> Self {
        Self {
            kind: ProviderKind::Gemini,
            model: model.into(),
            endpoint: "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent".into(),
            api_key_env: Some("GEMINI_API_KEY".into()),
            params: GenerationParams {
                temperature: Some(1.0),
                top_p: Some(0.95),
                top_k: Some(64),
                max_output_tokens: Some(8000),
                ..GenerationParams::default()
            },
        }
    }

    pub fn ollama(model: &str) -> Self {
        Self {
            kind: ProviderKind::Ollama,
            model: model.into(),
            endpoint: "http://localhost:11434/api/chat".into(),
            api_key_env: None,
            params: GenerationParams {
                temperature: Some(0.8),
                top_p: Some(0.9),
                top_k: Some(40),
                repeat_penalty: Some(1.1),
                repeat_last_n: Some(64),
                max_output_tokens: Some(-1),
                ..GenerationParams::default()
            },
        }
    }

    /// Profiles shipped by name.
    pub fn builtin(name: &str) -> Option<Self> {
        Some(match name {
            "gpt-4o" => Self::openai("gpt-4o"),
            "gpt-4.1" => Self::openai("gpt-4.1"),
            "gemini-2.5-flash" => Self::gemini("gemini-2.5-flash"),
            "qwen2.5-vl" => Self::ollama("qwen2.5vl:32b-fp16"),
            _ => return None,
        })
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["gpt-4o", "gpt-4.1", "gemini-2.5-flash", "qwen2.5-vl"]
    }

    fn url(&self) -> String {
        self.endpoint.replace("{model}", &self.model)
    }

    /// Provider-specific request for `req`.
    pub fn build_request(&self, req: &ChatRequest, api_key: Option<&str>) -> HttpRequest {
        let p = &req.params;
        let body = match self.kind {
            ProviderKind::OpenAi => {
                let messages: Vec<Value> = req
                    .messages
                    .iter()
                    .map(|m| {
                        let mut content = vec![json!({"type": "text", "text": m.text})];
                        for img in &m.images {
                            content.push(json!({
                                "type": "image_url",
                                "image_url": {"url": format!("data:{};base64,{}", img.mime, img.base64())}
                            }));
                        }
                        json!({"role": m.role, "content": content})
                    })
                    .collect();
                let mut body = Map::new();
                body.insert("model".into(), json!(req.model));
                body.insert("messages".into(), Value::Array(messages));
                body.insert("n".into(), json!(p.candidate_count));
                body.insert("stream".into(), json!(false));
                put(&mut body, "temperature", p.temperature);
                put(&mut body, "top_p", p.top_p);
                put(&mut body, "presence_penalty", p.presence_penalty);
                put(&mut body, "frequency_penalty", p.frequency_penalty);
                put(&mut body, "max_tokens", p.max_output_tokens);
                Value::Object(body)
            }
            ProviderKind::Gemini => {
                let system: Vec<Value> =
                    req.messages.iter().filter(|m| m.role == Role::System).map(|m| json!({"text": m.text})).collect();
                let contents: Vec<Value> = req
                    .messages
                    .iter()
                    .filter(|m| m.role != Role::System)
                    .map(|m| {
                        let mut parts = vec![json!({"text": m.text})];
                        for img in &m.images {
                            parts.push(json!({"inline_data": {"mime_type": img.mime, "data": img.base64()}}));
                        }
                        let role = if m.role == Role::Assistant { "model" } else { "user" };
                        json!({"role": role, "parts": parts})
                    })
                    .collect();
                let mut gen = Map::new();
                gen.insert("candidateCount".into(), json!(p.candidate_count));
                put(&mut gen, "temperature", p.temperature);
                put(&mut gen, "topP", p.top_p);
                put(&mut gen, "topK", p.top_k);
                put(&mut gen, "maxOutputTokens", p.max_output_tokens);
                let mut body = Map::new();
                if !system.is_empty() {
                    body.insert("systemInstruction".into(), json!({"parts": system}));
                }
                body.insert("contents".into(), Value::Array(contents));
                body.insert("generationConfig".into(), Value::Object(gen));
                Value::Object(body)
            }
            ProviderKind::Ollama => {
                let messages: Vec<Value> = req
                    .messages
                    .iter()
                    .map(|m| {
                        let mut msg = json!({"role": m.role, "content": m.text});
                        if !m.images.is_empty() {
                            msg["images"] = m.images.iter().map(|i| Value::String(i.base64())).collect();
                        }
                        msg
                    })
                    .collect();
                let mut options = Map::new();
                put(&mut options, "temperature", p.temperature);
                put(&mut options, "top_p", p.top_p);
                put(&mut options, "top_k", p.top_k);
                put(&mut options, "repeat_penalty", p.repeat_penalty);
                put(&mut options, "repeat_last_n", p.repeat_last_n);
                put(&mut options, "num_predict", p.max_output_tokens);
                json!({"model": req.model, "messages": messages, "stream": false, "options": options})
            }
        };
        let mut http = HttpRequest::post_json(self.url(), &body);
        if let Some(key) = api_key {
            http = match self.kind {
                ProviderKind::OpenAi => http.header("Authorization", format!("Bearer {key}")),
                ProviderKind::Gemini => http.header("x-goog-api-key", key),
                ProviderKind::Ollama => http.header("Authorization", format!("Bearer {key}")),
            };
        }
        http
    }

    /// Text of the first candidate plus token counts.
    pub fn parse_reply(&self, body: &[u8]) -> Result<(String, Usage), ClientError> {
        let v: Value = serde_json::from_slice(body)
            .map_err(|e| ClientError::MalformedReply(format!("response is not JSON: {e}")))?;
        let missing = |what: &str| ClientError::MalformedReply(format!("response has no {what}"));
        let count = |x: &Value| x.as_u64();
        match self.kind {
            ProviderKind::OpenAi => {
                let text = v["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(|| missing("choices[0].message.content"))?;
                let usage = Usage {
                    prompt_tokens: count(&v["usage"]["prompt_tokens"]),
                    completion_tokens: count(&v["usage"]["completion_tokens"]),
                };
                Ok((text.to_string(), usage))
            }
            ProviderKind::Gemini => {
                let parts = v["candidates"][0]["content"]["parts"]
                    .as_array()
                    .ok_or_else(|| missing("candidates[0].content.parts"))?;
                let text: String = parts.iter().filter_map(|p| p["text"].as_str()).collect();
                let usage = Usage {
                    prompt_tokens: count(&v["usageMetadata"]["promptTokenCount"]),
                    completion_tokens: count(&v["usageMetadata"]["candidatesTokenCount"]),
                };
                Ok((text, usage))
            }
            ProviderKind::Ollama => {
                let text = v["message"]["content"].as_str().ok_or_else(|| missing("message.content"))?;
                let usage =
                    Usage { prompt_tokens: count(&v["prompt_eval_count"]), completion_tokens: count(&v["eval_count"]) };
                Ok((text.to_string(), usage))
            }
        }
    }
}

fn put<T: Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub attempts: u32,
    pub base: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { attempts: 3, base: Duration::from_millis(500) }
    }
}

impl Backoff {
    fn delay(&self, failed: u32) -> Duration {
        self.base * 2u32.saturating_pow(failed.saturating_sub(1))
    }
}

/// Live chat client over any [`Transport`].
pub struct HttpChatClient {
    profile: ProviderProfile,
    transport: Arc<dyn Transport>,
    api_key: Option<String>,
    backoff: Backoff,
}

impl HttpChatClient {
    /// Resolves the API key through `lookup`; missing keys fail here, before
    /// any request is sent.
    pub fn with_key_lookup(
        profile: ProviderProfile,
        transport: Arc<dyn Transport>,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ClientError> {
        profile.params.validate()?;
        let api_key = match &profile.api_key_env {
            Some(var) => Some(
                lookup(var)
                    .filter(|k| !k.is_empty())
                    .ok_or_else(|| ClientError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self { profile, transport, api_key, backoff: Backoff::default() })
    }

    pub fn from_env(profile: ProviderProfile, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        Self::with_key_lookup(profile, transport, |v| std::env::var(v).ok())
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }
}

enum Attempt {
    Done(HttpResponse),
    Retry(String),
    Fatal(ClientError),
}

impl HttpChatClient {
    fn attempt(&self, http: &HttpRequest) -> Attempt {
        match self.transport.execute(http) {
            Ok(resp) if resp.is_success() => Attempt::Done(resp),
            Ok(resp) if resp.status == 401 || resp.status == 403 => Attempt::Fatal(ClientError::Config(format!(
                "{} rejected credentials (HTTP {})",
                self.profile.model, resp.status
            ))),
            Ok(resp) if resp.is_transient_failure() => Attempt::Retry(format!("HTTP {}", resp.status)),
            Ok(resp) => Attempt::Fatal(ClientError::Provider {
                context: self.profile.model.clone(),
                status: Some(resp.status),
                message: String::from_utf8_lossy(&resp.body).chars().take(300).collect(),
            }),
            Err(TransportError::Network(e)) => Attempt::Retry(e),
            Err(e @ TransportError::Blocked(_)) => {
                Attempt::Fatal(ClientError::Unavailable { attempts: 1, message: e.to_string() })
            }
        }
    }
}

impl ChatClient for HttpChatClient {
    fn model(&self) -> &str {
        &self.profile.model
    }

    fn params(&self) -> GenerationParams {
        self.profile.params
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        req.validate()?;
        let http = self.profile.build_request(req, self.api_key.as_deref());
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 0..self.backoff.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.backoff.delay(attempt));
            }
            match self.attempt(&http) {
                Attempt::Done(resp) => {
                    let (text, usage) = self.profile.parse_reply(&resp.body)?;
                    let latency_ms = started.elapsed().as_millis() as u64;
                    tracing::info!(
                        model = %self.profile.model,
                        latency_ms,
                        prompt_tokens = usage.prompt_tokens,
                        completion_tokens = usage.completion_tokens,
                        retries = attempt,
                        "chat completion"
                    );
                    return Ok(ChatResponse { text, usage, latency_ms, retry_count: attempt });
                }
                Attempt::Retry(why) => {
                    tracing::warn!(model = %self.profile.model, attempt, %why, "transient chat failure");
                    last = why;
                }
                Attempt::Fatal(e) => return Err(e),
            }
        }
        Err(ClientError::Unavailable { attempts: self.backoff.attempts.max(1), message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Script {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        seen: Mutex<Vec<HttpRequest>>,
    }

    impl Script {
        fn new(mut replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self { replies: Mutex::new(replies), seen: Mutex::new(Vec::new()) })
        }
    }

    impl Transport for Script {
        fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.seen.lock().unwrap().push(req.clone());
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    fn request(profile: &ProviderProfile) -> ChatRequest {
        ChatRequest {
            model: profile.model.clone(),
            messages: vec![
                ChatMessage::system("sys"),
                ChatMessage::user("hello", vec![ImageAttachment::jpeg(vec![1, 2, 3])]),
            ],
            params: profile.params,
        }
    }

    fn key(_: &str) -> Option<String> {
        Some("secret".into())
    }

    fn openai_ok(text: &str) -> Result<HttpResponse, TransportError> {
        let body = json!({"choices": [{"message": {"content": text}}], "usage": {"prompt_tokens": 10, "completion_tokens": 4}});
        Ok(HttpResponse::ok(body.to_string()))
    }

    #[test]
    fn retries_transient_failures() {
        let profile = ProviderProfile::openai("gpt-4o");
        let t = Script::new(vec![
            Err(TransportError::Network("reset".into())),
            Ok(HttpResponse { status: 503, body: vec![] }),
            openai_ok("fine"),
        ]);
        let c = HttpChatClient::with_key_lookup(profile.clone(), t.clone(), key)
            .unwrap()
            .with_backoff(Backoff { attempts: 3, base: Duration::ZERO });
        let r = c.chat(&request(&profile)).unwrap();
        assert_eq!(r.text, "fine");
        assert_eq!(r.retry_count, 2);
        assert_eq!(r.usage.prompt_tokens, Some(10));
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn persistent_failure_is_unavailable() {
        let profile = ProviderProfile::openai("gpt-4o");
        let t = Script::new((0..3).map(|_| Err(TransportError::Network("down".into()))).collect());
        let c = HttpChatClient::with_key_lookup(profile.clone(), t, key)
            .unwrap()
            .with_backoff(Backoff { attempts: 3, base: Duration::ZERO });
        assert!(matches!(c.chat(&request(&profile)), Err(ClientError::Unavailable { attempts: 3, .. })));
    }

    #[test]
    fn missing_key_is_config_error_before_io() {
        let t = Script::new(vec![]);
        let err = HttpChatClient::with_key_lookup(ProviderProfile::gemini("gemini-2.5-flash"), t.clone(), |_| None);
        assert!(matches!(err, Err(ClientError::Config(_))));
        assert!(t.seen.lock().unwrap().is_empty());
        // keyless local server needs nothing
        assert!(HttpChatClient::with_key_lookup(ProviderProfile::ollama("q"), t, |_| None).is_ok());
    }

    #[test]
    fn auth_failure_is_config_error() {
        let profile = ProviderProfile::openai("gpt-4.1");
        let t = Script::new(vec![Ok(HttpResponse { status: 401, body: b"no".to_vec() })]);
        let c = HttpChatClient::with_key_lookup(profile.clone(), t, key).unwrap();
        assert!(matches!(c.chat(&request(&profile)), Err(ClientError::Config(_))));
    }

    #[test]
    fn openai_body_shape() {
        let profile = ProviderProfile::openai("gpt-4o");
        let http = profile.build_request(&request(&profile), Some("k"));
        let body: Value = serde_json::from_slice(http.body.as_ref().unwrap()).unwrap();
        assert_eq!(body["n"], 1);
        assert_eq!(body["stream"], false);
        assert_eq!(body["max_tokens"], 8000);
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/jpeg;base64,AQID");
        assert!(http.headers.contains(&("Authorization".into(), "Bearer k".into())));
    }

    #[test]
    fn gemini_body_and_reply() {
        let profile = ProviderProfile::gemini("gemini-2.5-flash");
        let http = profile.build_request(&request(&profile), Some("k"));
        assert!(http.url.ends_with("/models/gemini-2.5-flash:generateContent"));
        let body: Value = serde_json::from_slice(http.body.as_ref().unwrap()).unwrap();
        assert_eq!(body["generationConfig"]["topK"], 64);
        assert_eq!(body["generationConfig"]["topP"], 0.95);
        assert_eq!(body["generationConfig"]["candidateCount"], 1);
        assert_eq!(body["systemInstruction"]["parts"][0]["text"], "sys");
        assert_eq!(body["contents"][0]["parts"][1]["inline_data"]["data"], "AQID");
        let reply = json!({"candidates": [{"content": {"parts": [{"text": "a"}, {"text": "b"}]}}], "usageMetadata": {"promptTokenCount": 7}});
        let (text, usage) = profile.parse_reply(reply.to_string().as_bytes()).unwrap();
        assert_eq!(text, "ab");
        assert_eq!(usage.prompt_tokens, Some(7));
    }

    #[test]
    fn ollama_body_shape() {
        let profile = ProviderProfile::ollama("qwen2.5vl:32b-fp16");
        let http = profile.build_request(&request(&profile), None);
        let body: Value = serde_json::from_slice(http.body.as_ref().unwrap()).unwrap();
        assert_eq!(body["options"]["num_predict"], -1);
        assert_eq!(body["options"]["repeat_last_n"], 64);
        assert_eq!(body["options"]["repeat_penalty"], 1.1);
        assert_eq!(body["messages"][1]["images"][0], "AQID");
        assert!(http.headers.iter().all(|(k, _)| k != "Authorization"));
    }

    #[test]
    fn params_validation() {
        for name in ProviderProfile::builtin_names() {
            ProviderProfile::builtin(name).unwrap().params.validate().unwrap();
        }
        let p = GenerationParams { candidate_count: 2, ..GenerationParams::default() };
        assert!(p.validate().is_err());
        let p = GenerationParams { temperature: Some(2.5), ..GenerationParams::default() };
        assert!(p.validate().is_err());
    }
}
