use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_messages, BackendError, ChatBackend, ChatMessage, GenerationParams};

/// Connection settings for an OpenAI-compatible chat-completions server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configuration.
    pub token_env: Option<String>,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            token_env: None,
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    seed: u64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(Result<String, BackendError>),
    Retry(BackendError),
}

/// Blocking chat-completions client with bounded retries and concurrency.
///
/// Transport failures, HTTP 429 and 5xx responses are retried with
/// exponential backoff; other non-2xx responses fail immediately.
#[derive(Debug)]
pub struct HttpChatBackend {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    config: HttpChatConfig,
    in_flight: InFlight,
}

impl HttpChatBackend {
    /// Builds the client, resolving the token from the environment now so a
    /// missing variable is reported before any request is made.
    pub fn new(config: HttpChatConfig) -> Result<Self, BackendError> {
        let token = match &config.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingToken(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            token,
            in_flight: InFlight::new(config.max_in_flight),
            config,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &str, attempt: u32) -> Attempt {
        let mut request = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = match request.send(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => Attempt::Done(parse_reply(&text)),
            429 | 500..=599 => Attempt::Retry(BackendError::Server { status, body: text }),
            _ => Attempt::Done(Err(BackendError::Server { status, body: text })),
        }
    }
}

fn parse_reply(text: &str) -> Result<String, BackendError> {
    let body: ResponseBody =
        serde_json::from_str(text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    body.choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?
        .message
        .content
        .ok_or_else(|| BackendError::MalformedResponse("first choice has no content".into()))
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        validate_messages(messages)?;
        let body = serde_json::to_string(&RequestBody {
            model: &params.model_id,
            messages,
            temperature: params.temperature,
            seed: params.seed,
            max_tokens: params.max_output_tokens,
        })
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;

        let attempts = self.config.max_attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        for attempt in 1..=attempts {
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.attempt(&body, attempt)
            };
            match outcome {
                Attempt::Done(result) => return result,
                Attempt::Retry(err) if attempt == attempts => return Err(err),
                Attempt::Retry(_) => {
                    thread::sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                }
            }
        }
        unreachable!("loop returns on the final attempt")
    }
}
