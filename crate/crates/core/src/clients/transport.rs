//! Minimal HTTP abstraction so providers can be exercised without sockets.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self { method: Method::Get, url: url.into(), headers: Vec::new(), body: None }
    }

    pub fn post_json(url: impl Into<String>, body: &serde_json::Value) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body.to_string().into_bytes()),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    /// Decoded query parameters of the URL, in order.
    pub fn query_pairs(&self) -> Vec<(String, String)> {
        let Some((_, query)) = self.url.split_once('?') else {
            return Vec::new();
        };
        query
            .split('&')
            .filter(|kv| !kv.is_empty())
            .map(|kv| match kv.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => (kv.to_string(), String::new()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self { status: 200, body: body.into() }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// 429 and 5xx are worth retrying; other failures are not.
    pub fn is_transient_failure(&self) -> bool {
        self.status == 429 || self.status >= 500
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("outbound connection blocked by network guard: {0}")]
    Blocked(String),
}

pub trait Transport: Send + Sync {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

static OUTBOUND_ATTEMPTS: AtomicU64 = AtomicU64::new(0);
static OUTBOUND_BLOCKED: AtomicBool = AtomicBool::new(false);

/// Process-wide guard on real network use.
///
/// Every request that reaches [`UreqTransport`] is counted, and refused once
/// [`network_guard::deny_outbound`] has been called. Offline test suites
/// assert the counter stays at zero.
pub mod network_guard {
    use super::*;

    pub fn deny_outbound() {
        OUTBOUND_BLOCKED.store(true, Ordering::SeqCst);
    }

    pub fn allow_outbound() {
        OUTBOUND_BLOCKED.store(false, Ordering::SeqCst);
    }

    pub fn is_denied() -> bool {
        OUTBOUND_BLOCKED.load(Ordering::SeqCst)
    }

    pub fn outbound_attempts() -> u64 {
        OUTBOUND_ATTEMPTS.load(Ordering::SeqCst)
    }

    pub(super) fn check(url: &str) -> Result<(), TransportError> {
        OUTBOUND_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
        if is_denied() {
            return Err(TransportError::Blocked(url.to_string()));
        }
        Ok(())
    }
}

/// Blocking HTTP transport over real sockets.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build().into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        network_guard::check(&req.url)?;
        let net = |e: ureq::Error| TransportError::Network(e.to_string());
        let mut resp = match req.method {
            Method::Get => {
                let mut r = self.agent.get(&req.url);
                for (k, v) in &req.headers {
                    r = r.header(k.as_str(), v.as_str());
                }
                r.call().map_err(net)?
            }
            Method::Post => {
                let mut r = self.agent.post(&req.url);
                for (k, v) in &req.headers {
                    r = r.header(k.as_str(), v.as_str());
                }
                r.send(req.body.as_deref().unwrap_or_default()).map_err(net)?
            }
        };
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_vec().map_err(net)?;
        Ok(HttpResponse { status, body })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_pairs_split() {
        let r = HttpRequest::get("https://x.test/a?size=512x512&fov=90&pitch=30");
        assert_eq!(
            r.query_pairs(),
            vec![
                ("size".to_string(), "512x512".to_string()),
                ("fov".into(), "90".into()),
                ("pitch".into(), "30".into())
            ]
        );
        assert!(HttpRequest::get("https://x.test").query_pairs().is_empty());
    }

    #[test]
    fn transient_statuses() {
        assert!(HttpResponse { status: 503, body: vec![] }.is_transient_failure());
        assert!(HttpResponse { status: 429, body: vec![] }.is_transient_failure());
        assert!(!HttpResponse { status: 401, body: vec![] }.is_transient_failure());
    }
}
