use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary verdict on an answer candidate.
///
/// `False` orders before `True`, which is also the order label partitions
/// are laid out in the example index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "FALSE")]
    False,
    #[serde(rename = "TRUE")]
    True,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::False, Label::True];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::False => "FALSE",
            Label::True => "TRUE",
        }
    }

    pub fn is_true(self) -> bool {
        self == Label::True
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::False => Label::True,
            Label::True => Label::False,
        }
    }
}

impl From<bool> for Label {
    fn from(value: bool) -> Self {
        if value {
            Label::True
        } else {
            Label::False
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected TRUE or FALSE, found {0:?}")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    /// Accepts only the exact literals `TRUE` and `FALSE`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TRUE" => Ok(Label::True),
            "FALSE" => Ok(Label::False),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}
