//! Prompt strategies and their rendering into a system + user message pair.
//!
//! The user message is a sequence of blocks separated by one blank line.
//! Exemplar blocks carry every field through `Label:`; the final test block
//! stops at the header the model is expected to complete.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, Instance, SplitKind};
use crate::label::Label;

pub const DEFAULT_SYSTEM_PROMPT: &str = "\
You will be shown legal background in an \"Introduction\", a \"Question\" about it, \
and an \"Answer Candidate\". Decide whether the Answer Candidate correctly answers \
the Question in light of the Introduction.

If the final block ends with \"Analysis:\", write a careful step-by-step Analysis of \
the Answer Candidate's validity, then end with a separate line reading \"Label: TRUE\" \
or \"Label: FALSE\".
If the final block ends with \"Label:\", reply with TRUE or FALSE only.

Do not write anything besides the requested Analysis and Label. The Label must be \
exactly TRUE or FALSE.";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("strategy {0} takes no in-context examples, but {1} were supplied")]
    UnexpectedShots(Strategy, usize),
    #[error("strategy {0} needs in-context examples, none were supplied")]
    MissingShots(Strategy),
    #[error("exemplar {0} has no analysis, required for chain-of-thought strategies")]
    ShotMissingAnalysis(String),
    #[error("exemplar {0} has no label")]
    ShotMissingLabel(String),
    #[error("fixed shot set needs at least one TRUE and one FALSE exemplar (found {trues} TRUE, {falses} FALSE)")]
    UnbalancedShots { trues: usize, falses: usize },
    #[error("invalid template: {0}")]
    Template(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    ZeroShotCot,
    FewShot,
    FewShotCot,
    FewShotRag,
    FewShotCotRag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShotSource {
    None,
    Fixed,
    Retrieved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Requirements {
    pub shots: ShotSource,
    pub cot: bool,
}

impl Strategy {
    /// Every strategy, in report order.
    pub const ALL: [Strategy; 6] = [
        Strategy::ZeroShot,
        Strategy::ZeroShotCot,
        Strategy::FewShot,
        Strategy::FewShotCot,
        Strategy::FewShotRag,
        Strategy::FewShotCotRag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::ZeroShotCot => "zero_shot_cot",
            Strategy::FewShot => "few_shot",
            Strategy::FewShotCot => "few_shot_cot",
            Strategy::FewShotRag => "few_shot_rag",
            Strategy::FewShotCotRag => "few_shot_cot_rag",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "Zero-Shot",
            Strategy::ZeroShotCot => "Zero-Shot & CoT",
            Strategy::FewShot => "Few-Shot",
            Strategy::FewShotCot => "Few-Shot & CoT",
            Strategy::FewShotRag => "Few-Shot & RAG",
            Strategy::FewShotCotRag => "Few-Shot & CoT & RAG",
        }
    }

    pub fn requirements(self) -> Requirements {
        strategy_requirements(self)
    }
}

pub fn strategy_requirements(strategy: Strategy) -> Requirements {
    let (shots, cot) = match strategy {
        Strategy::ZeroShot => (ShotSource::None, false),
        Strategy::ZeroShotCot => (ShotSource::None, true),
        Strategy::FewShot => (ShotSource::Fixed, false),
        Strategy::FewShotCot => (ShotSource::Fixed, true),
        Strategy::FewShotRag => (ShotSource::Retrieved, false),
        Strategy::FewShotCotRag => (ShotSource::Retrieved, true),
    };
    Requirements { shots, cot }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == wanted)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.as_str()).collect();
                format!("unknown strategy {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldHeaders {
    pub introduction: String,
    pub question: String,
    pub answer_candidate: String,
    pub analysis: String,
    pub label: String,
}

impl Default for FieldHeaders {
    fn default() -> Self {
        Self {
            introduction: "Introduction:".into(),
            question: "Question:".into(),
            answer_candidate: "Answer Candidate:".into(),
            analysis: "Analysis:".into(),
            label: "Label:".into(),
        }
    }
}

/// System prompt plus the literal block headers.
///
/// Label literals are always `TRUE` and `FALSE`; the system text must
/// mention both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: String,
    #[serde(default)]
    pub headers: FieldHeaders,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM_PROMPT.to_string(),
            headers: FieldHeaders::default(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        for label in Label::ALL {
            if !self.system.contains(label.as_str()) {
                return Err(PromptError::Template(format!(
                    "system prompt must mention the literal {label}"
                )));
            }
        }
        let h = &self.headers;
        let headers = [&h.introduction, &h.question, &h.answer_candidate, &h.analysis, &h.label];
        for (i, a) in headers.iter().enumerate() {
            if a.trim().is_empty() || a.contains('\n') {
                return Err(PromptError::Template(format!("header {a:?} must be a non-empty single line")));
            }
            if headers[i + 1..].contains(a) {
                return Err(PromptError::Template(format!("header {a:?} is used twice")));
            }
        }
        Ok(())
    }

    /// Template file: TOML with a `system` string and an optional
    /// `[headers]` table.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PromptError::Template(format!("cannot read {}: {e}", path.display())))?;
        let template: PromptTemplate =
            toml::from_str(&text).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        template.validate()?;
        Ok(template)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TerminalField {
    Analysis,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
    pub terminal_field: TerminalField,
}

impl PromptMessages {
    pub fn user_word_count(&self) -> usize {
        self.user.split_whitespace().count()
    }

    /// Returns a warning when the user text exceeds `budget` words. The
    /// prompt itself is never truncated.
    pub fn check_word_budget(&self, budget: usize) -> Option<String> {
        let words = self.user_word_count();
        (words > budget).then(|| format!("prompt has {words} words, budget is {budget}"))
    }
}

fn push_field(out: &mut String, header: &str, value: &str) {
    out.push_str(header);
    out.push(' ');
    out.push_str(value);
    out.push('\n');
}

fn render_exemplar(out: &mut String, h: &FieldHeaders, shot: &Instance, label: Label, cot: bool) {
    push_field(out, &h.introduction, &shot.introduction);
    push_field(out, &h.question, &shot.question);
    push_field(out, &h.answer_candidate, &shot.answer_candidate);
    if cot {
        push_field(out, &h.analysis, shot.analysis.as_deref().unwrap_or_default());
    }
    out.push_str(&h.label);
    out.push(' ');
    out.push_str(label.as_str());
}

/// Render the prompt for `test`. `shots` must already be in prompt order.
/// Chain-of-thought strategies end the test block at the analysis header;
/// the others end it at the label header.
pub fn render_prompt(
    strategy: Strategy,
    template: &PromptTemplate,
    test: &Instance,
    shots: &[&Instance],
) -> Result<PromptMessages, PromptError> {
    let req = strategy.requirements();
    match req.shots {
        ShotSource::None if !shots.is_empty() => {
            return Err(PromptError::UnexpectedShots(strategy, shots.len()))
        }
        ShotSource::Fixed | ShotSource::Retrieved if shots.is_empty() => {
            return Err(PromptError::MissingShots(strategy))
        }
        _ => {}
    }
    let h = &template.headers;
    let mut user = String::new();
    for shot in shots {
        let label = shot
            .label
            .ok_or_else(|| PromptError::ShotMissingLabel(shot.id.clone()))?;
        if req.cot && !shot.has_analysis() {
            return Err(PromptError::ShotMissingAnalysis(shot.id.clone()));
        }
        render_exemplar(&mut user, h, shot, label, req.cot);
        user.push_str("\n\n");
    }
    push_field(&mut user, &h.introduction, &test.introduction);
    push_field(&mut user, &h.question, &test.question);
    push_field(&mut user, &h.answer_candidate, &test.answer_candidate);
    let terminal_field = if req.cot {
        user.push_str(&h.analysis);
        TerminalField::Analysis
    } else {
        user.push_str(&h.label);
        TerminalField::Label
    };
    Ok(PromptMessages {
        system: template.system.clone(),
        user,
        terminal_field,
    })
}

/// Field values recovered from one rendered block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedBlock {
    pub introduction: String,
    pub question: String,
    pub answer_candidate: String,
    pub analysis: Option<String>,
    /// `None` for a test block that stops at a header.
    pub label: Option<Label>,
    pub terminal_field: Option<TerminalField>,
}

/// Split a rendered user message into its blocks.
pub fn split_blocks<'a>(template: &PromptTemplate, user: &'a str) -> Vec<&'a str> {
    let sep = format!("\n\n{} ", template.headers.introduction);
    let mut blocks = Vec::new();
    let mut rest = user;
    while let Some(pos) = rest.find(&sep) {
        blocks.push(&rest[..pos]);
        rest = &rest[pos + 2..];
    }
    blocks.push(rest);
    blocks
}

/// Inverse of block rendering. Values must not themselves contain a newline
/// followed by a header.
pub fn parse_block(template: &PromptTemplate, block: &str) -> Result<ParsedBlock, PromptError> {
    let h = &template.headers;
    let bad = |what: &str| PromptError::Template(format!("block does not parse: {what}"));
    let rest = block
        .strip_prefix(h.introduction.as_str())
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| bad("missing introduction header"))?;
    let take_until = |rest: &'_ str, header: &str| -> Option<(String, usize)> {
        let marker = format!("\n{header}");
        rest.find(&marker).map(|pos| (rest[..pos].to_string(), pos + marker.len()))
    };
    let (introduction, n) = take_until(rest, &h.question).ok_or_else(|| bad("missing question"))?;
    let rest = rest[n..].strip_prefix(' ').ok_or_else(|| bad("question value"))?;
    let (question, n) = take_until(rest, &h.answer_candidate).ok_or_else(|| bad("missing answer"))?;
    let rest = rest[n..].strip_prefix(' ').ok_or_else(|| bad("answer value"))?;

    let analysis_marker = format!("\n{}", h.analysis);
    let label_marker = format!("\n{}", h.label);
    let analysis_pos = rest.find(&analysis_marker);
    let label_pos = rest.find(&label_marker);
    let (answer_candidate, mut rest, has_analysis) = match (analysis_pos, label_pos) {
        (Some(a), l) if l.is_none_or(|l| a < l) => (rest[..a].to_string(), &rest[a + analysis_marker.len()..], true),
        (_, Some(l)) => (rest[..l].to_string(), &rest[l + 1..], false),
        _ => return Err(bad("missing analysis or label")),
    };

    let mut analysis = None;
    if has_analysis {
        if rest.is_empty() {
            return Ok(ParsedBlock {
                introduction,
                question,
                answer_candidate,
                analysis: None,
                label: None,
                terminal_field: Some(TerminalField::Analysis),
            });
        }
        let body = rest.strip_prefix(' ').ok_or_else(|| bad("analysis value"))?;
        let l = body.rfind(&label_marker).ok_or_else(|| bad("missing label after analysis"))?;
        analysis = Some(body[..l].to_string());
        rest = &body[l + 1..];
    }
    let after = rest.strip_prefix(h.label.as_str()).ok_or_else(|| bad("label header"))?;
    if after.is_empty() {
        return Ok(ParsedBlock {
            introduction,
            question,
            answer_candidate,
            analysis,
            label: None,
            terminal_field: Some(TerminalField::Label),
        });
    }
    let label = after
        .strip_prefix(' ')
        .and_then(|v| v.parse::<Label>().ok())
        .ok_or_else(|| bad("label value"))?;
    Ok(ParsedBlock {
        introduction,
        question,
        answer_candidate,
        analysis,
        label: Some(label),
        terminal_field: None,
    })
}

/// Fixed in-context examples shared by every test instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedShotSet {
    shots: Vec<Instance>,
}

impl FixedShotSet {
    pub fn new(shots: Vec<Instance>) -> Result<Self, PromptError> {
        for shot in &shots {
            if shot.label.is_none() {
                return Err(PromptError::ShotMissingLabel(shot.id.clone()));
            }
        }
        let trues = shots.iter().filter(|s| s.label == Some(Label::True)).count();
        let falses = shots.len() - trues;
        if trues == 0 || falses == 0 {
            return Err(PromptError::UnbalancedShots { trues, falses });
        }
        Ok(Self { shots })
    }

    pub fn shots(&self) -> &[Instance] {
        &self.shots
    }

    pub fn as_refs(&self) -> Vec<&Instance> {
        self.shots.iter().collect()
    }
}

/// Shots use the dataset record format; labels are required, analyses are
/// optional (only chain-of-thought rendering needs them).
pub fn load_fixed_shots(path: impl AsRef<Path>) -> Result<FixedShotSet, PromptError> {
    let dataset = corpus::load_dataset(path, SplitKind::Validation)?;
    FixedShotSet::new(dataset.instances().to_vec())
}
