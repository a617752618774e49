//! Chat-completion access: providers, response cache, label parsing and the
//! re-prompt protocol for completions without a usable label.

mod cache;
mod classify;
mod mock;
mod parse;
mod remote;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompting::{PromptError, PromptMessages, TerminalField};

pub use cache::{cache_key, CacheEntry, CachedProvider, ReplayProvider, ResponseCache};
pub use classify::{
    classify_instance, read_predictions, write_predictions, ParseStatus, Prediction, RetryPolicy,
    DEFAULT_RETRY_PREAMBLE,
};
pub use mock::{MockProvider, MockScriptEntry};
pub use parse::{parse_label, LabelMatch};
pub use remote::{RemoteChatProvider, TransportRetry, API_KEY_ENV};

pub const DEFAULT_MODEL: &str = "gpt-4-1106-preview";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_COT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_LABEL_MAX_TOKENS: u32 = 8;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("environment variable {0} is not set")]
    MissingCredential(&'static str),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("provider response violates the protocol: {0}")]
    Protocol(String),
    #[error("replay cache has no entry for digest {0}")]
    CacheMiss(String),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("mock provider has no scripted response for digest {0}")]
    Unscripted(String),
    #[error("invalid completion parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("prediction file: {0}")]
    PredictionFile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidParams(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidParams("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Sampling settings shared by all strategies; the output budget depends on
/// whether the model writes an analysis first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSettings {
    pub model_name: String,
    pub temperature: f64,
    pub cot_max_tokens: u32,
    pub label_max_tokens: u32,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self {
            model_name: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            cot_max_tokens: DEFAULT_COT_MAX_TOKENS,
            label_max_tokens: DEFAULT_LABEL_MAX_TOKENS,
        }
    }
}

impl ChatSettings {
    pub fn params_for(&self, terminal: TerminalField) -> CompletionParams {
        CompletionParams {
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_output_tokens: match terminal {
                TerminalField::Analysis => self.cot_max_tokens,
                TerminalField::Label => self.label_max_tokens,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProviderKind {
    Remote,
    Mock,
    Replay,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Remote => "REMOTE",
            ProviderKind::Mock => "MOCK",
            ProviderKind::Replay => "REPLAY",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    /// Verbatim model output.
    pub text: String,
    pub provider_kind: ProviderKind,
    pub cache_hit: bool,
}

pub trait ChatProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn complete(&self, messages: &PromptMessages, params: &CompletionParams) -> Result<Completion, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }

    fn complete(&self, messages: &PromptMessages, params: &CompletionParams) -> Result<Completion, LlmError> {
        (**self).complete(messages, params)
    }
}

pub fn complete(
    provider: &dyn ChatProvider,
    messages: &PromptMessages,
    params: &CompletionParams,
) -> Result<Completion, LlmError> {
    params.validate()?;
    provider.complete(messages, params)
}
