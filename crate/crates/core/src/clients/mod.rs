//! External services: multimodal chat, street-level imagery, and offline stand-ins.

use std::path::PathBuf;

use thiserror::Error;

pub mod chat;
pub mod imagery;
pub mod mock;
pub mod transport;

pub use chat::{
    Backoff, ChatClient, ChatMessage, ChatRequest, ChatResponse, GenerationParams, HttpChatClient, ImageAttachment,
    ProviderKind, ProviderProfile, Role, Usage,
};
pub use imagery::{
    CachedImageProvider, ImageCache, ImageProvider, ImageRef, StreetViewProvider, StubImageProvider, ViewParams,
};
pub use mock::{FnChatClient, MockNavigatorClient, RecordingClient, ScriptedChatClient};
pub use transport::{network_guard, HttpRequest, HttpResponse, Transport, TransportError, UreqTransport};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("client unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider error for {context}{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider { context: String, status: Option<u16>, message: String },
    #[error("cache storage error at {}: {source}", path.display())]
    Storage { path: PathBuf, source: std::io::Error },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider reply: {0}")]
    MalformedReply(String),
}
