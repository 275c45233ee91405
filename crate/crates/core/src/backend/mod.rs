//! Chat-completion backends.
//!
//! [`ChatBackend`] is the one call the coding engine needs. Three
//! implementations ship with the crate:
//!
//! * [`HttpChatBackend`] speaks the chat-completions JSON protocol served by
//!   hosted APIs and by local inference servers.
//! * [`OracleBackend`] answers from gold labels, for lossless pipeline tests.
//! * [`ScriptedBackend`] replays a fixed list of replies.

mod http;
mod oracle;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpChatBackend, HttpChatConfig};
pub use oracle::OracleBackend;
pub use scripted::ScriptedBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
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

/// Sampling parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl GenerationParams {
    pub const DEFAULT_TEMPERATURE: f64 = 0.1;
    pub const DEFAULT_SEED: u64 = 42;
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: Self::DEFAULT_TEMPERATURE,
            seed: Self::DEFAULT_SEED,
            max_output_tokens: 64,
            model_id: String::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned HTTP {status}: {body}")]
    Server { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),
    #[error("oracle miss: {0}")]
    OracleMiss(String),
}

impl BackendError {
    /// Errors that indicate the backend itself is unreachable or failing.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::Server { .. })
    }
}

/// A chat-completion model. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

/// Checks the shape every backend expects: non-empty, system turn first, no
/// empty contents.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    match messages.first() {
        None => return Err(BackendError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(BackendError::InvalidRequest("first message must be the system turn".into()))
        }
        _ => {}
    }
    if let Some(i) = messages.iter().position(|m| m.content.trim().is_empty()) {
        return Err(BackendError::InvalidRequest(format!("message {i} has empty content")));
    }
    Ok(())
}
