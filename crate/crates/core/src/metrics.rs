//! Confusion matrix, accuracy and two-class macro F1, plus report files.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::label::Label;
use crate::prompting::Strategy;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot score an empty confusion matrix")]
    Empty,
    #[error("prediction and gold ids differ: only predicted {only_predicted:?}, only gold {only_gold:?}")]
    IdMismatch {
        only_predicted: Vec<String>,
        only_gold: Vec<String>,
    },
    #[error("id {0} appears more than once")]
    DuplicateId(String),
    #[error("nothing to report")]
    NoRows,
    #[error("cannot write report to {path}: {message}")]
    Write { path: String, message: String },
}

/// Two-class confusion counts with TRUE as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// actual FALSE, predicted FALSE
    pub tn: u64,
    /// actual FALSE, predicted TRUE
    pub fp: u64,
    /// actual TRUE, predicted FALSE
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// actual TRUE, predicted TRUE
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn record(&mut self, gold: Label, predicted: Label) {
        match (gold, predicted) {
            (Label::False, Label::False) => self.tn += 1,
            (Label::False, Label::True) => self.fp += 1,
            (Label::True, Label::False) => self.fn_ += 1,
            (Label::True, Label::True) => self.tp += 1,
        }
    }

    /// The matrix obtained by swapping TRUE and FALSE everywhere.
    pub fn relabeled(&self) -> Self {
        Self {
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
            tp: self.tn,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 of one class, `2·hit / (2·hit + false alarms + misses)`; 0 when the
/// class never occurs in gold or predictions.
pub fn class_f1(cm: &ConfusionMatrix, class: Label) -> f64 {
    let (num, den) = class_f1_ratio(cm, class);
    ratio(num, den)
}

fn class_f1_ratio(cm: &ConfusionMatrix, class: Label) -> (u64, u64) {
    let (hit, false_alarm, miss) = match class {
        Label::True => (cm.tp, cm.fp, cm.fn_),
        Label::False => (cm.tn, cm.fn_, cm.fp),
    };
    (2 * hit, 2 * hit + false_alarm + miss)
}

/// Macro F1 as an exact fraction (numerator, denominator) of the class-F1 sum;
/// the 1/2 factor is dropped.
fn macro_f1_sum(cm: &ConfusionMatrix) -> (u128, u128) {
    let fraction = |(n, d): (u64, u64)| if d == 0 { (0u128, 1u128) } else { (n as u128, d as u128) };
    let (a, b) = fraction(class_f1_ratio(cm, Label::True));
    let (c, d) = fraction(class_f1_ratio(cm, Label::False));
    (a * d + c * b, b * d)
}

/// Exact comparison of two matrices' macro F1, free of rounding.
pub fn cmp_macro_f1(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Ordering {
    let (an, ad) = macro_f1_sum(a);
    let (bn, bd) = macro_f1_sum(b);
    (an * bd).cmp(&(bn * ad))
}

/// Exact comparison of two matrices' accuracy.
pub fn cmp_accuracy(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Ordering {
    let correct = |m: &ConfusionMatrix| (m.tp + m.tn) as u128;
    (correct(a) * b.total().max(1) as u128).cmp(&(correct(b) * a.total().max(1) as u128))
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(ratio(cm.tn + cm.tp, cm.total()))
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    Ok((class_f1(cm, Label::True) + class_f1(cm, Label::False)) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub matrix: ConfusionMatrix,
    /// In gold order.
    pub false_positive_ids: Vec<String>,
    pub false_negative_ids: Vec<String>,
}

/// Count predictions against gold labels. Both sides must cover exactly the
/// same ids.
pub fn confusion(predictions: &[(String, Label)], gold: &[(String, Label)]) -> Result<Confusion, MetricsError> {
    let mut predicted: HashMap<&str, Label> = HashMap::with_capacity(predictions.len());
    for (id, label) in predictions {
        if predicted.insert(id.as_str(), *label).is_some() {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let mut gold_ids = BTreeSet::new();
    for (id, _) in gold {
        if !gold_ids.insert(id.as_str()) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let predicted_ids: BTreeSet<&str> = predicted.keys().copied().collect();
    if predicted_ids != gold_ids {
        return Err(MetricsError::IdMismatch {
            only_predicted: predicted_ids.difference(&gold_ids).map(|s| s.to_string()).collect(),
            only_gold: gold_ids.difference(&predicted_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut out = Confusion::default();
    for (id, truth) in gold {
        let guess = predicted[id.as_str()];
        out.matrix.record(*truth, guess);
        match (truth, guess) {
            (Label::False, Label::True) => out.false_positive_ids.push(id.clone()),
            (Label::True, Label::False) => out.false_negative_ids.push(id.clone()),
            _ => {}
        }
    }
    Ok(out)
}

/// Row identity in a report; the derived order is the table order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Baseline(String),
    Strategy(Strategy),
    Ensemble,
}

impl Method {
    pub fn key(&self) -> String {
        match self {
            Method::Baseline(name) => name.clone(),
            Method::Strategy(s) => s.as_str().to_string(),
            Method::Ensemble => "ensemble".to_string(),
        }
    }

    pub fn display_name(&self) -> String {
        match self {
            Method::Baseline(name) => name.clone(),
            Method::Strategy(s) => s.display_name().to_string(),
            Method::Ensemble => "Ensemble".to_string(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub method: Method,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

impl ScoreRow {
    pub fn score(method: Method, predictions: &[(String, Label)], gold: &[(String, Label)]) -> Result<Self, MetricsError> {
        let confusion = confusion(predictions, gold)?;
        Ok(Self {
            method,
            macro_f1: macro_f1(&confusion.matrix)?,
            accuracy: accuracy(&confusion.matrix)?,
            confusion,
        })
    }
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    method: String,
    macro_f1: f64,
    accuracy: f64,
    #[serde(flatten)]
    matrix: &'a ConfusionMatrix,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    method: String,
    false_positives: &'a [String],
    false_negatives: &'a [String],
}

/// `.8095` style: four decimals, no leading zero.
pub fn format_score(value: f64) -> String {
    let s = format!("{value:.4}");
    match s.strip_prefix('0') {
        Some(rest) => rest.to_string(),
        None => s,
    }
}

pub fn render_table(rows: &[ScoreRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.display_name().len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>6}", "Method", "Macro F1", "Acc.");
    let _ = writeln!(out, "{}", "-".repeat(width + 18));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>6}",
            r.method.display_name(),
            format_score(r.macro_f1),
            format_score(r.accuracy)
        );
    }
    out
}

pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    format!(
        "{:<10}{:>10}{:>10}\n{:<10}{:>10}{:>10}\n{:<10}{:>10}{:>10}\n",
        "", "predFalse", "predTrue", "actFalse", cm.tn, cm.fp, "actTrue", cm.fn_, cm.tp
    )
}

pub struct ReportFiles {
    pub scores: std::path::PathBuf,
    pub table: std::path::PathBuf,
    pub errors: std::path::PathBuf,
}

/// Writes `scores.jsonl`, `scores.txt` and `errors.jsonl` into `dir`, rows
/// sorted by [`Method`] order.
pub fn emit_report(rows: &[ScoreRow], dir: impl AsRef<Path>) -> Result<ReportFiles, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::NoRows);
    }
    let dir = dir.as_ref();
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.method.cmp(&b.method));

    let mut scores = String::new();
    let mut errors = String::new();
    for r in &rows {
        let record = ScoreRecord {
            method: r.method.key(),
            macro_f1: r.macro_f1,
            accuracy: r.accuracy,
            matrix: &r.confusion.matrix,
        };
        scores.push_str(&serde_json::to_string(&record).expect("score record serializes"));
        scores.push('\n');
        let record = ErrorRecord {
            method: r.method.key(),
            false_positives: &r.confusion.false_positive_ids,
            false_negatives: &r.confusion.false_negative_ids,
        };
        errors.push_str(&serde_json::to_string(&record).expect("error record serializes"));
        errors.push('\n');
    }
    let mut table = render_table(&rows);
    for r in &rows {
        let _ = write!(table, "\n{}\n{}", r.method.display_name(), render_confusion(&r.confusion.matrix));
    }

    let files = ReportFiles {
        scores: dir.join("scores.jsonl"),
        table: dir.join("scores.txt"),
        errors: dir.join("errors.jsonl"),
    };
    let write = |path: &Path, body: &str| {
        fs::create_dir_all(dir)
            .and_then(|_| fs::write(path, body))
            .map_err(|e| MetricsError::Write {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    };
    write(&files.scores, &scores)?;
    write(&files.table, &table)?;
    write(&files.errors, &errors)?;
    Ok(files)
}
