//! Label vocabulary, label sources, dataset items and vote aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Labels keyed by item id, in insertion order.
pub type LabelMap = indexmap::IndexMap<String, Label>;

/// Ternary annotation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Yes,
    No,
    Unclear,
}

impl Label {
    /// All labels in canonical display order (Yes, No, Unclear).
    pub const ALL: [Label; 3] = [Label::Yes, Label::No, Label::Unclear];

    /// Integer code: Yes = 1, No = -1, Unclear = 0.
    pub fn code(self) -> i8 {
        match self {
            Label::Yes => 1,
            Label::No => -1,
            Label::Unclear => 0,
        }
    }

    pub fn from_code(code: i64) -> Result<Self, LabelError> {
        match code {
            1 => Ok(Label::Yes),
            -1 => Ok(Label::No),
            0 => Ok(Label::Unclear),
            other => Err(LabelError::OutOfDomain(other)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "Yes",
            Label::No => "No",
            Label::Unclear => "Unclear",
        }
    }

    /// Position in [`Label::ALL`]; used as a matrix index.
    pub fn index(self) -> usize {
        match self {
            Label::Yes => 0,
            Label::No => 1,
            Label::Unclear => 2,
        }
    }

    /// Parses a cell that may hold either the text form or the integer code.
    pub fn parse_cell(cell: &str) -> Result<Self, LabelError> {
        let cell = cell.trim();
        if let Ok(code) = cell.parse::<i64>() {
            return Label::from_code(code);
        }
        cell.parse()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = LabelError;

    /// Case-insensitive on input; surrounding whitespace is not accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("yes") {
            Ok(Label::Yes)
        } else if s.eq_ignore_ascii_case("no") {
            Ok(Label::No)
        } else if s.eq_ignore_ascii_case("unclear") {
            Ok(Label::Unclear)
        } else {
            Err(LabelError::UnknownText(s.to_string()))
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label code {0} is outside {{-1, 0, 1}}")]
    OutOfDomain(i64),
    #[error("unknown label text {0:?}; expected Yes, No or Unclear")]
    UnknownText(String),
}

/// The three topic corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    PhysicalActivity,
    SedentaryBehavior,
    SleepProblems,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::PhysicalActivity,
        Category::SedentaryBehavior,
        Category::SleepProblems,
    ];

    /// Config and report key, also the default header file stem.
    pub fn key(self) -> &'static str {
        match self {
            Category::PhysicalActivity => "physical_activity",
            Category::SedentaryBehavior => "sedentary_behavior",
            Category::SleepProblems => "sleep_problems",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Category::ALL
            .into_iter()
            .find(|c| c.key() == norm)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Who produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    CrowdWorker,
    Expert,
    Llm,
}

impl SourceKind {
    fn prefix(self) -> &'static str {
        match self {
            SourceKind::CrowdWorker => "crowd",
            SourceKind::Expert => "expert",
            SourceKind::Llm => "llm",
        }
    }
}

/// A label slot on an item: a source kind plus an ordinal.
///
/// Ordinals 1.. name individual workers, experts or LLM runs. Ordinal 0 is
/// the consensus slot holding the majority vote over that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSource {
    pub kind: SourceKind,
    pub index: u8,
}

impl LabelSource {
    pub const fn new(kind: SourceKind, index: u8) -> Self {
        Self { kind, index }
    }

    pub const fn consensus(kind: SourceKind) -> Self {
        Self { kind, index: 0 }
    }

    pub fn is_consensus(self) -> bool {
        self.index == 0
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_consensus() {
            f.write_str(self.kind.prefix())
        } else {
            write!(f, "{}:{}", self.kind.prefix(), self.index)
        }
    }
}

impl FromStr for LabelSource {
    type Err = String;

    /// Accepts `crowd`, `expert`, `llm` (consensus) or `<kind>:<n>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, index) = match s.split_once(':') {
            Some((k, i)) => {
                let index: u8 = i
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad source ordinal in {s:?}"))?;
                if index == 0 {
                    return Err(format!("source ordinal must be >= 1 in {s:?}"));
                }
                (k, index)
            }
            None => (s, 0),
        };
        let kind = match kind.trim().to_ascii_lowercase().as_str() {
            "crowd" | "crowd_worker" | "amt" => SourceKind::CrowdWorker,
            "expert" | "exp" => SourceKind::Expert,
            "llm" => SourceKind::Llm,
            other => return Err(format!("unknown label source kind {other:?}")),
        };
        Ok(LabelSource { kind, index })
    }
}

impl Serialize for LabelSource {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelSource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One text item with its per-source labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedItem {
    pub id: String,
    pub text: String,
    pub category: Category,
    pub labels: BTreeMap<LabelSource, Label>,
}

impl AnnotatedItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>, category: Category) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            category,
            labels: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, source: LabelSource, label: Label) -> Self {
        self.labels.insert(source, label);
        self
    }

    pub fn label(&self, source: LabelSource) -> Option<Label> {
        self.labels.get(&source).copied()
    }

    /// Labels from individual (non-consensus) sources of `kind`, by ordinal.
    pub fn individual_labels(&self, kind: SourceKind) -> Vec<Label> {
        self.labels
            .iter()
            .filter(|(s, _)| s.kind == kind && !s.is_consensus())
            .map(|(_, l)| *l)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("no votes to aggregate")]
    EmptyVotes,
    #[error("majority vote needs an odd number of votes, got {0}")]
    EvenArity(usize),
}

/// Majority vote over an odd number of labels.
///
/// A label held by more than half of the votes wins. Without a strict
/// majority (for three votes: one of each) the result is `Unclear`.
pub fn majority_vote(votes: &[Label]) -> Result<Label, VoteError> {
    match votes.len() {
        0 => Err(VoteError::EmptyVotes),
        n if n % 2 == 0 => Err(VoteError::EvenArity(n)),
        _ => Ok(strict_majority_or_unclear(votes)),
    }
}

/// Strict majority over any number of votes, `Unclear` when there is none.
///
/// Used where some votes are missing, e.g. two surviving runs out of three.
pub fn strict_majority_or_unclear(votes: &[Label]) -> Label {
    let mut counts = [0usize; 3];
    for v in votes {
        counts[v.index()] += 1;
    }
    Label::ALL
        .into_iter()
        .find(|l| counts[l.index()] * 2 > votes.len())
        .unwrap_or(Label::Unclear)
}
