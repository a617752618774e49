use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse::strip_analysis_header;
use super::{complete, parse_label, ChatProvider, ChatSettings, LlmError};
use crate::corpus::Instance;
use crate::label::Label;
use crate::prompting::{render_prompt, PromptMessages, PromptTemplate, Strategy, TerminalField};

pub const DEFAULT_RETRY_PREAMBLE: &str = "Your previous response did not contain a final label. \
Answer with TRUE or FALSE only.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub retry_limit: u32,
    pub retry_preamble: String,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retry_limit: 3,
            retry_preamble: DEFAULT_RETRY_PREAMBLE.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ParseStatus {
    /// The first completion carried a label.
    Clean,
    /// A re-prompt produced the label.
    Recovered,
    /// Every attempt failed; the label fell back to FALSE.
    Defaulted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub strategy: Strategy,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_analysis: Option<String>,
    pub retries_used: u32,
    pub parse_status: ParseStatus,
}

/// The original request with the failed output appended, followed by the
/// retry preamble.
fn retry_messages(original: &PromptMessages, previous: &str, policy: &RetryPolicy) -> PromptMessages {
    let previous = previous.trim();
    let user = if previous.is_empty() {
        format!("{}\n\n{}", original.user, policy.retry_preamble)
    } else {
        format!("{} {}\n\n{}", original.user, previous, policy.retry_preamble)
    };
    PromptMessages {
        system: original.system.clone(),
        user,
        terminal_field: original.terminal_field,
    }
}

/// Render, complete, parse; re-prompt up to `policy.retry_limit` times when
/// no label can be read, then fall back to FALSE.
pub fn classify_instance(
    provider: &dyn ChatProvider,
    strategy: Strategy,
    template: &PromptTemplate,
    test: &Instance,
    shots: &[&Instance],
    settings: &ChatSettings,
    policy: &RetryPolicy,
) -> Result<Prediction, LlmError> {
    let messages = render_prompt(strategy, template, test, shots)?;
    let params = settings.params_for(messages.terminal_field);
    let cot = messages.terminal_field == TerminalField::Analysis;

    let first = complete(provider, &messages, &params)?;
    let first_text = first.text;
    let mut current = first_text.clone();
    let mut retries = 0;
    loop {
        if let Some(found) = parse_label(&current) {
            let generated_analysis = cot.then(|| {
                let before = found.preceding_text(&current);
                if before.is_empty() || retries > 0 {
                    // The analysis was written in the first answer.
                    strip_analysis_header(&first_text).to_string()
                } else {
                    before.to_string()
                }
            });
            return Ok(Prediction {
                id: test.id.clone(),
                strategy,
                label: found.label,
                generated_analysis: generated_analysis.filter(|a| !a.is_empty()),
                retries_used: retries,
                parse_status: if retries == 0 {
                    ParseStatus::Clean
                } else {
                    ParseStatus::Recovered
                },
            });
        }
        if retries == policy.retry_limit {
            log::warn!(
                "{} / {}: no label after {} retries, defaulting to FALSE",
                test.id,
                strategy,
                retries
            );
            let analysis = strip_analysis_header(&first_text);
            return Ok(Prediction {
                id: test.id.clone(),
                strategy,
                label: Label::False,
                generated_analysis: (cot && !analysis.is_empty()).then(|| analysis.to_string()),
                retries_used: retries,
                parse_status: ParseStatus::Defaulted,
            });
        }
        retries += 1;
        let retry = retry_messages(&messages, &current, policy);
        current = complete(provider, &retry, &params)?.text;
    }
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<(), LlmError> {
    let path = path.as_ref();
    let err = |e: std::io::Error| LlmError::PredictionFile(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    for p in predictions {
        serde_json::to_writer(&mut w, p).map_err(|e| LlmError::PredictionFile(e.to_string()))?;
        w.write_all(b"\n").map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, LlmError> {
    let path = path.as_ref();
    let err = |e: std::io::Error| LlmError::PredictionFile(format!("{}: {e}", path.display()));
    let reader = BufReader::new(File::open(path).map_err(err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(err)?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| LlmError::PredictionFile(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(p);
    }
    Ok(out)
}
