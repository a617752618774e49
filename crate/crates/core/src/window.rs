//! Sliding-window classification for encoders with a fixed word budget.

use std::collections::HashMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Instance;
use crate::label::Label;
use crate::limit::InFlightLimit;

pub const DEFAULT_WORD_LIMIT: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum WindowError {
    #[error("no window capacity: question and answer take {qa_words} of {limit} words")]
    NoCapacity { qa_words: usize, limit: usize },
    #[error("introduction is empty")]
    EmptyIntroduction,
    #[error("plan covers {planned} words but the introduction has {actual}")]
    PlanMismatch { planned: usize, actual: usize },
    #[error("no window labels to vote on")]
    NoVotes,
    #[error("window classifier at {endpoint}: {message}")]
    Remote { endpoint: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub capacity_words: usize,
    pub num_windows: usize,
    pub window_sizes: Vec<usize>,
}

pub fn plan_windows(intro_words: usize, qa_words: usize, limit: usize) -> Result<WindowPlan, WindowError> {
    if intro_words == 0 {
        return Err(WindowError::EmptyIntroduction);
    }
    let capacity_words = limit.saturating_sub(qa_words) / 2;
    if qa_words >= limit || capacity_words == 0 {
        return Err(WindowError::NoCapacity { qa_words, limit });
    }
    let num_windows = intro_words.div_ceil(capacity_words);
    let base = intro_words / num_windows;
    let extra = intro_words % num_windows;
    let window_sizes = (0..num_windows).map(|i| base + usize::from(i < extra)).collect();
    Ok(WindowPlan {
        capacity_words,
        num_windows,
        window_sizes,
    })
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn split_introduction(introduction: &str, plan: &WindowPlan) -> Result<Vec<String>, WindowError> {
    let words: Vec<&str> = introduction.split_whitespace().collect();
    let planned: usize = plan.window_sizes.iter().sum();
    if planned != words.len() {
        return Err(WindowError::PlanMismatch {
            planned,
            actual: words.len(),
        });
    }
    let mut rest = words.as_slice();
    Ok(plan
        .window_sizes
        .iter()
        .map(|&n| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.join(" ")
        })
        .collect())
}

/// Unweighted majority; a tie goes to FALSE.
pub fn window_vote(labels: &[Label]) -> Result<Label, WindowError> {
    if labels.is_empty() {
        return Err(WindowError::NoVotes);
    }
    let trues = labels.iter().filter(|l| l.is_true()).count();
    Ok(Label::from(trues * 2 > labels.len()))
}

pub trait WindowClassifier: Send + Sync {
    fn classify(&self, text: &str) -> Result<Label, WindowError>;
}

/// Deterministic classifier: exact-text script first, then a keyword rule,
/// then a hash of the text.
#[derive(Debug, Clone, Default)]
pub struct MockWindowClassifier {
    script: HashMap<String, Label>,
    true_keywords: Vec<String>,
}

impl MockWindowClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_script(mut self, script: HashMap<String, Label>) -> Self {
        self.script = script;
        self
    }

    /// Texts containing any keyword (case-insensitive) are TRUE, others FALSE.
    pub fn with_true_keywords<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.true_keywords = keywords.into_iter().map(|k| k.into().to_lowercase()).collect();
        self
    }
}

impl WindowClassifier for MockWindowClassifier {
    fn classify(&self, text: &str) -> Result<Label, WindowError> {
        if let Some(label) = self.script.get(text) {
            return Ok(*label);
        }
        if !self.true_keywords.is_empty() {
            let lower = text.to_lowercase();
            return Ok(Label::from(self.true_keywords.iter().any(|k| lower.contains(k))));
        }
        Ok(Label::from(Sha256::digest(text.as_bytes())[0] < 96))
    }
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    label: Label,
}

/// HTTP client: `POST {endpoint}/classify` with `{"text": ...}`.
pub struct RemoteWindowClassifier {
    endpoint: String,
    agent: ureq::Agent,
    limit: InFlightLimit,
}

impl RemoteWindowClassifier {
    pub fn new(endpoint: impl Into<String>, max_in_flight: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            limit: InFlightLimit::new(max_in_flight),
        }
    }
}

impl WindowClassifier for RemoteWindowClassifier {
    fn classify(&self, text: &str) -> Result<Label, WindowError> {
        let _permit = self.limit.acquire();
        let err = |message: String| WindowError::Remote {
            endpoint: self.endpoint.clone(),
            message,
        };
        let response: ClassifyResponse = self
            .agent
            .post(&format!("{}/classify", self.endpoint))
            .send_json(ClassifyRequest { text })
            .map_err(|e| err(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| err(e.to_string()))?;
        Ok(response.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub id: String,
    pub label: Label,
    pub window_labels: Vec<Label>,
}

/// Text sent to the classifier for one window.
pub fn window_text(window: &str, instance: &Instance) -> String {
    format!("{window}\n{}\n{}", instance.question, instance.answer_candidate)
}

pub fn classify_long(
    classifier: &dyn WindowClassifier,
    instance: &Instance,
    limit: usize,
) -> Result<WindowPrediction, WindowError> {
    let qa_words = word_count(&instance.question) + word_count(&instance.answer_candidate);
    let plan = plan_windows(word_count(&instance.introduction), qa_words, limit)?;
    let windows = split_introduction(&instance.introduction, &plan)?;
    let window_labels = windows
        .par_iter()
        .map(|w| classifier.classify(&window_text(w, instance)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WindowPrediction {
        id: instance.id.clone(),
        label: window_vote(&window_labels)?,
        window_labels,
    })
}

/// Window predictions for every instance, in input order, on up to `jobs`
/// worker threads.
pub fn classify_dataset(
    classifier: &dyn WindowClassifier,
    instances: &[Instance],
    limit: usize,
    jobs: usize,
) -> Result<Vec<WindowPrediction>, WindowError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool builds");
    pool.install(|| {
        instances
            .par_iter()
            .map(|i| classify_long(classifier, i, limit))
            .collect()
    })
}
