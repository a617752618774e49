use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cache_key, ChatProvider, Completion, CompletionParams, LlmError, ProviderKind};
use crate::prompting::{PromptMessages, TerminalField};

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScriptEntry {
    pub digest: String,
    pub response: String,
}

enum Mode {
    /// Responses handed out in call order, whatever the prompt.
    Sequence(Mutex<VecDeque<String>>),
    /// Responses keyed by request digest, with an optional synthetic fallback.
    Scripted {
        responses: HashMap<String, String>,
        synthetic_fallback: bool,
    },
}

/// Deterministic stand-in for a chat model.
///
/// The synthetic mode derives every answer from a hash of the request, so a
/// given prompt always yields the same text regardless of call order or
/// thread. Roughly one first-attempt answer in thirteen carries no label,
/// which exercises the retry path.
pub struct MockProvider {
    mode: Mode,
}

impl MockProvider {
    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            mode: Mode::Sequence(Mutex::new(responses.into_iter().map(Into::into).collect())),
        }
    }

    /// Strict script: an unknown digest is an error.
    pub fn scripted(responses: HashMap<String, String>) -> Self {
        Self {
            mode: Mode::Scripted {
                responses,
                synthetic_fallback: false,
            },
        }
    }

    pub fn synthetic() -> Self {
        Self {
            mode: Mode::Scripted {
                responses: HashMap::new(),
                synthetic_fallback: true,
            },
        }
    }

    /// Scripted answers where given, synthetic answers elsewhere.
    pub fn synthetic_with_script(entries: Vec<MockScriptEntry>) -> Self {
        Self {
            mode: Mode::Scripted {
                responses: entries.into_iter().map(|e| (e.digest, e.response)).collect(),
                synthetic_fallback: true,
            },
        }
    }

    /// Read a JSON-lines script of `{"digest": ..., "response": ...}`.
    pub fn read_script(path: impl AsRef<Path>) -> Result<Vec<MockScriptEntry>, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidParams(format!("mock script {}: {e}", path.display())))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| {
                    LlmError::InvalidParams(format!("mock script {} line {}: {e}", path.display(), i + 1))
                })
            })
            .collect()
    }
}

fn synthetic_response(messages: &PromptMessages, params: &CompletionParams) -> String {
    let seed = Sha256::digest(cache_key(messages, params).as_bytes());
    if seed[1] < 20 {
        return "I am unable to reach a verdict on this answer candidate.".to_string();
    }
    let verdict = if seed[0] < 96 { "TRUE" } else { "FALSE" };
    match messages.terminal_field {
        TerminalField::Label => verdict.to_string(),
        TerminalField::Analysis => {
            let reason = if verdict == "TRUE" {
                "The answer candidate applies the governing rule from the introduction correctly."
            } else {
                "The answer candidate misapplies the governing rule from the introduction."
            };
            format!(" {reason}\nLabel: {verdict}")
        }
    }
}

impl ChatProvider for MockProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn complete(&self, messages: &PromptMessages, params: &CompletionParams) -> Result<Completion, LlmError> {
        let text = match &self.mode {
            Mode::Sequence(queue) => queue
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .pop_front()
                .ok_or_else(|| LlmError::Unscripted(cache_key(messages, params)))?,
            Mode::Scripted {
                responses,
                synthetic_fallback,
            } => {
                let digest = cache_key(messages, params);
                match responses.get(&digest) {
                    Some(text) => text.clone(),
                    None if *synthetic_fallback => synthetic_response(messages, params),
                    None => return Err(LlmError::Unscripted(digest)),
                }
            }
        };
        Ok(Completion {
            text,
            provider_kind: ProviderKind::Mock,
            cache_hit: false,
        })
    }
}
