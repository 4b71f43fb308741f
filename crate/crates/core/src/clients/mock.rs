//! Offline chat clients for tests and dry runs. None of them touch the network.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::chat::{ChatClient, ChatRequest, ChatResponse, Role, Usage};
use super::ClientError;

fn reply(text: String) -> ChatResponse {
    ChatResponse { text, usage: Usage::default(), latency_ms: 0, retry_count: 0 }
}

/// Returns canned replies in order; an exhausted script reports the client as
/// unavailable.
pub struct ScriptedChatClient {
    replies: Mutex<VecDeque<String>>,
}

impl ScriptedChatClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { replies: Mutex::new(replies.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }
}

impl ChatClient for ScriptedChatClient {
    fn model(&self) -> &str {
        "scripted"
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        req.validate()?;
        let next = self.replies.lock().expect("script lock").pop_front();
        next.map(reply).ok_or_else(|| ClientError::Unavailable { attempts: 1, message: "script exhausted".into() })
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, ClientError> + Send + Sync;

/// Replies computed by a closure over the request.
pub struct FnChatClient {
    f: Box<ReplyFn>,
}

impl FnChatClient {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, ClientError> + Send + Sync + 'static) -> Self {
        Self { f: Box::new(f) }
    }
}

impl ChatClient for FnChatClient {
    fn model(&self) -> &str {
        "fn-mock"
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        req.validate()?;
        (self.f)(req).map(reply)
    }
}

/// Text-only snapshot of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedCall {
    pub system: String,
    pub user: String,
    pub image_count: usize,
}

/// Wraps a client and keeps every request it forwards.
pub struct RecordingClient<C> {
    inner: C,
    calls: Mutex<Vec<RecordedCall>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().expect("record lock").clone()
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn params(&self) -> super::chat::GenerationParams {
        self.inner.params()
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let system = req
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        self.calls.lock().expect("record lock").push(RecordedCall {
            system,
            user: req.user_text(),
            image_count: req.image_count(),
        });
        self.inner.chat(req)
    }
}

pub const OPTION_IDS_HEADER: &str = "VALID OPTION IDS";

/// Option ids listed on the line after the valid-ids header of a prompt.
pub fn offered_option_ids(prompt: &str) -> Vec<String> {
    let mut lines = prompt.lines().skip_while(|l| !l.starts_with(OPTION_IDS_HEADER));
    lines.next();
    lines
        .next()
        .map(|l| l.split('|').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

/// Plays the navigator role without a model.
///
/// The reply is a pure function of the seed and the prompt text, so episodes
/// stay reproducible when run in parallel. A configurable share of replies is
/// deliberately unusable to exercise retry handling.
pub struct MockNavigatorClient {
    seed: u64,
    malformed_rate: f64,
}

impl MockNavigatorClient {
    pub fn new(seed: u64) -> Self {
        Self { seed, malformed_rate: 0.0 }
    }

    pub fn with_malformed_rate(mut self, rate: f64) -> Self {
        self.malformed_rate = rate.clamp(0.0, 1.0);
        self
    }

    fn digest(&self, text: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        h.finalize().into()
    }
}

impl ChatClient for MockNavigatorClient {
    fn model(&self) -> &str {
        "mock-navigator"
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        req.validate()?;
        let prompt = req.user_text();
        let d = self.digest(&prompt);
        let word = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        let roll = d[8] as f64 / 256.0;
        let ids = offered_option_ids(&prompt);
        if ids.is_empty() {
            return Ok(reply(format!("Block {} near the plaza (evidence: mock facade {:02x})", word % 97, d[9])));
        }
        if roll < self.malformed_rate {
            let text = match d[10] % 3 {
                0 => "I am not sure where to go.".to_string(),
                1 => json!({"analysis": "missing decision", "memory": "x"}).to_string(),
                _ => json!({"analysis": "bad id", "decision": "step999_option9", "memory": "x"}).to_string(),
            };
            return Ok(reply(text));
        }
        let choice = &ids[(word % ids.len() as u64) as usize];
        let body = json!({
            "analysis": format!("Heading roughly toward the goal; picked {choice}."),
            "decision": choice,
            "memory": format!("note-{word:016x}: keep exploring"),
        });
        let text = if d[11].is_multiple_of(2) {
            body.to_string()
        } else {
            format!("Here is my answer:\n```json\n{body:#}\n```\n")
        };
        Ok(reply(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::chat::{ChatMessage, GenerationParams};

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(text, vec![])],
            params: GenerationParams::default(),
        }
    }

    #[test]
    fn scripted_in_order_then_unavailable() {
        let c = ScriptedChatClient::new(["a", "b"]);
        assert_eq!(c.chat(&req("x")).unwrap().text, "a");
        assert_eq!(c.chat(&req("x")).unwrap().text, "b");
        assert!(matches!(c.chat(&req("x")), Err(ClientError::Unavailable { .. })));
    }

    #[test]
    fn navigator_picks_offered_id() {
        let prompt = format!("blah\n{OPTION_IDS_HEADER} (choose one):\nstep2_option0 | step2_option1\n");
        assert_eq!(offered_option_ids(&prompt), vec!["step2_option0", "step2_option1"]);
        let c = MockNavigatorClient::new(5);
        let a = c.chat(&req(&prompt)).unwrap().text;
        assert_eq!(a, c.chat(&req(&prompt)).unwrap().text);
        assert!(a.contains("step2_option"));
        let pos = c.chat(&req("where am I")).unwrap().text;
        assert!(pos.contains("(evidence:"));
    }
}
