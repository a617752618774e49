//! Dataset schema, line-delimited JSON loading, and train/eval leakage audit.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"id":"v-001","introduction":"...","question":"...","answer_candidate":"...","analysis":"...","label":"TRUE"}
//! ```
//!
//! `analysis` and `label` may be omitted or `null`. Blank lines are skipped
//! but still counted for error line numbers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::label::Label;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record is missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line} (id {id}): field `{field}` is empty")]
    EmptyField {
        line: usize,
        id: String,
        field: &'static str,
    },
    #[error("line {line} (id {id}): {split} record has no label")]
    MissingLabel {
        line: usize,
        id: String,
        split: SplitKind,
    },
    #[error("line {line} (id {id}): TRAIN record has no analysis")]
    MissingAnalysis { line: usize, id: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn requires_label(self) -> bool {
        matches!(self, SplitKind::Train | SplitKind::Validation)
    }

    pub fn requires_analysis(self) -> bool {
        self == SplitKind::Train
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_ascii_uppercase())
    }
}

impl FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitKind::Train),
            "validation" | "dev" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(format!("unknown split kind {other:?}")),
        }
    }
}

/// One answer candidate together with its case background and question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub introduction: String,
    pub question: String,
    pub answer_candidate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Instance {
    /// Key used by the leakage audit: lowercased, whitespace-collapsed
    /// introduction and question.
    pub fn introduction_question_key(&self) -> String {
        format!(
            "{}\n{}",
            normalize_text(&self.introduction),
            normalize_text(&self.question)
        )
    }

    pub fn has_analysis(&self) -> bool {
        self.analysis.as_deref().is_some_and(|a| !a.trim().is_empty())
    }
}

/// Lowercase and collapse every run of whitespace to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split_kind: SplitKind,
    instances: Vec<Instance>,
}

impl Dataset {
    /// Validates `instances` against the rules for `split_kind`. Line numbers
    /// in errors are 1-based positions in `instances`.
    pub fn new(split_kind: SplitKind, instances: Vec<Instance>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, instance) in instances.iter().enumerate() {
            validate_instance(instance, split_kind, i + 1)?;
            if !seen.insert(instance.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: instance.id.clone(),
                });
            }
        }
        Ok(Self {
            split_kind,
            instances,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn by_id(&self) -> HashMap<&str, &Instance> {
        self.instances.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    /// Gold labels keyed by id; instances without a label are skipped.
    pub fn gold_labels(&self) -> Vec<(String, Label)> {
        self.instances
            .iter()
            .filter_map(|i| i.label.map(|l| (i.id.clone(), l)))
            .collect()
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let trues = self
            .instances
            .iter()
            .filter(|i| i.label == Some(Label::True))
            .count();
        let falses = self
            .instances
            .iter()
            .filter(|i| i.label == Some(Label::False))
            .count();
        (trues, falses)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: Option<String>,
    introduction: Option<String>,
    question: Option<String>,
    answer_candidate: Option<String>,
    #[serde(default)]
    analysis: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

fn validate_instance(instance: &Instance, split: SplitKind, line: usize) -> Result<(), CorpusError> {
    let fields = [
        ("id", instance.id.as_str()),
        ("introduction", instance.introduction.as_str()),
        ("question", instance.question.as_str()),
        ("answer_candidate", instance.answer_candidate.as_str()),
    ];
    for (field, value) in fields {
        if value.trim().is_empty() {
            return Err(CorpusError::EmptyField {
                line,
                id: instance.id.clone(),
                field,
            });
        }
    }
    if split.requires_label() && instance.label.is_none() {
        return Err(CorpusError::MissingLabel {
            line,
            id: instance.id.clone(),
            split,
        });
    }
    if split.requires_analysis() && !instance.has_analysis() {
        return Err(CorpusError::MissingAnalysis {
            line,
            id: instance.id.clone(),
        });
    }
    Ok(())
}

fn parse_record(text: &str, line: usize) -> Result<Instance, CorpusError> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let require = |value: Option<String>, field: &'static str| {
        value.ok_or(CorpusError::MissingField { line, field })
    };
    let label = match raw.label {
        None => None,
        Some(text) => Some(text.parse::<Label>().map_err(|e| CorpusError::Malformed {
            line,
            message: format!("field `label`: {e}"),
        })?),
    };
    Ok(Instance {
        id: require(raw.id, "id")?,
        introduction: require(raw.introduction, "introduction")?,
        question: require(raw.question, "question")?,
        answer_candidate: require(raw.answer_candidate, "answer_candidate")?,
        analysis: raw.analysis,
        label,
    })
}

/// Parse and validate line-delimited records from any reader.
pub fn read_dataset<R: BufRead>(reader: R, split_kind: SplitKind) -> Result<Dataset, CorpusError> {
    let mut instances = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let instance = parse_record(&line, lineno)?;
        validate_instance(&instance, split_kind, lineno)?;
        if !seen.insert(instance.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: lineno,
                id: instance.id,
            });
        }
        instances.push(instance);
    }
    Ok(Dataset {
        split_kind,
        instances,
    })
}

pub fn load_dataset(path: impl AsRef<Path>, split_kind: SplitKind) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file), split_kind)
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> io::Result<()> {
    for instance in dataset.instances() {
        serde_json::to_writer(&mut writer, instance)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_dataset(dataset, BufWriter::new(file)).map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakagePair {
    pub train_id: String,
    pub other_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub overlap_count: usize,
    pub overlapping_pairs: Vec<LeakagePair>,
}

/// Flag every instance of `other` whose normalized introduction and question
/// also occur in `train`. Each flagged instance is paired with the first
/// training instance carrying the same key, so `overlap_count` is the number
/// of flagged instances in `other`.
pub fn audit_leakage(train: &Dataset, other: &Dataset) -> LeakageReport {
    let mut first_by_key: HashMap<String, &str> = HashMap::new();
    for instance in train.instances() {
        first_by_key
            .entry(instance.introduction_question_key())
            .or_insert(instance.id.as_str());
    }
    let overlapping_pairs: Vec<LeakagePair> = other
        .instances()
        .iter()
        .filter_map(|instance| {
            first_by_key
                .get(&instance.introduction_question_key())
                .map(|train_id| LeakagePair {
                    train_id: (*train_id).to_string(),
                    other_id: instance.id.clone(),
                })
        })
        .collect();
    LeakageReport {
        overlap_count: overlapping_pairs.len(),
        overlapping_pairs,
    }
}
