use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, Completion, CompletionParams, LlmError, ProviderKind};
use crate::limit::InFlightLimit;
use crate::prompting::PromptMessages;

pub const API_KEY_ENV: &str = "LLM_API_KEY";

/// Backoff for network-level failures. Independent of label retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportRetry {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for TransportRetry {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay_ms: 500,
            max_delay_ms: 16_000,
        }
    }
}

impl TransportRetry {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: [ChatMessage<'a>; 2],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

enum AttemptError {
    Retryable(String),
    Fatal(LlmError),
}

/// Client for an OpenAI-style `chat/completions` endpoint.
pub struct RemoteChatProvider {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
    retry: TransportRetry,
    limit: InFlightLimit,
}

impl RemoteChatProvider {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        retry: TransportRetry,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent,
            retry,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    /// Reads the credential from `LLM_API_KEY`.
    pub fn from_env(
        endpoint: impl Into<String>,
        retry: TransportRetry,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(LlmError::MissingCredential(API_KEY_ENV))?;
        Ok(Self::new(endpoint, key, retry, max_in_flight, timeout))
    }

    fn attempt(&self, request: &ChatRequest<'_>) -> Result<String, AttemptError> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Fatal(LlmError::Http { status, body }));
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Fatal(LlmError::Protocol(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AttemptError::Fatal(LlmError::Protocol("response has no message content".into())))
    }
}

impl ChatProvider for RemoteChatProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn complete(&self, messages: &PromptMessages, params: &CompletionParams) -> Result<Completion, LlmError> {
        let request = ChatRequest {
            model: &params.model_name,
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &messages.system,
                },
                ChatMessage {
                    role: "user",
                    content: &messages.user,
                },
            ],
        };
        let _permit = self.limit.acquire();
        let mut attempt = 0;
        loop {
            match self.attempt(&request) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        provider_kind: ProviderKind::Remote,
                        cache_hit: false,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(message)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(LlmError::Transport {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let delay = self.retry.delay(attempt);
                    log::warn!("chat request failed ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
