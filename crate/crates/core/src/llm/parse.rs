use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

use crate::label::Label;

/// `label` + optional markup + `:` + optional markup + TRUE/FALSE.
static LABELED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\blabel\b[\s*_"'`\[\]()]*:[\s*_"'`\[\]()]*\b(true|false)\b"#).expect("valid regex")
});
static BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(true|false)\b").expect("valid regex"));

/// Where a label was found in a completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatch {
    pub label: Label,
    /// Byte range of the whole match, including a `Label:` prefix if any.
    pub span: Range<usize>,
    /// Whether the occurrence followed a `Label:` header.
    pub labeled: bool,
}

impl LabelMatch {
    /// Text preceding the matched label, trimmed, with a leading
    /// `Analysis:` header removed. Empty when nothing precedes the label.
    pub fn preceding_text<'a>(&self, text: &'a str) -> &'a str {
        strip_analysis_header(text[..self.span.start].trim())
    }
}

pub(crate) fn strip_analysis_header(text: &str) -> &str {
    let t = text.trim_start();
    match t.get(..9) {
        Some(head) if head.eq_ignore_ascii_case("analysis:") => t[9..].trim(),
        _ => text.trim(),
    }
}

/// Find the label in a completion.
///
/// Standalone `TRUE`/`FALSE` words are matched case-insensitively. A token
/// following a `Label:` header outranks bare tokens; among candidates of the
/// same rank the last occurrence wins. Returns `None` when no standalone
/// token occurs.
pub fn parse_label(text: &str) -> Option<LabelMatch> {
    let to_match = |caps: regex::Captures<'_>, labeled: bool| {
        let whole = caps.get(0).expect("group 0");
        let word = caps.get(1).expect("group 1").as_str();
        LabelMatch {
            label: Label::from(word.eq_ignore_ascii_case("true")),
            span: whole.range(),
            labeled,
        }
    };
    if let Some(caps) = LABELED.captures_iter(text).last() {
        return Some(to_match(caps, true));
    }
    BARE.captures_iter(text).last().map(|caps| to_match(caps, false))
}
