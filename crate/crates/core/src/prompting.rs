//! Prompt assembly: a rules header, a fixed reply-format contract, and one
//! `<id>\t<escaped text>` line per item.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::label::{AnnotatedItem, Category};

/// Appended after the rules of every header. The reply grammar enforced by
/// [`crate::parsing`] is the one described here.
pub const FORMAT_CONTRACT: &str = "\n\n### Output format\n\
Reply with exactly one line per item listed below, in the form `id,label`.\n\
`label` must be one of: Yes, No, Unclear.\n\
Copy each id exactly as given. Label every item exactly once.\n\
Do not add explanations, headings, numbering, or any other text.\n\
\n### Items (one per line: id<TAB>text)\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("header file {path} is empty")]
    EmptyHeader { path: String },
    #[error("header rules must not embed the output-format contract")]
    ContractInRules,
    #[error("reading header {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("duplicate id {0:?} in batch")]
    DuplicateIdInBatch(String),
    #[error("cannot build a prompt for an empty batch")]
    EmptyBatch,
    #[error("prompt has no item section")]
    MissingItemSection,
    #[error("malformed item line {0}")]
    MalformedItemLine(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptHeader {
    pub category: Category,
    rules_text: String,
}

impl PromptHeader {
    pub fn new(category: Category, rules_text: impl Into<String>) -> Result<Self, PromptError> {
        let rules_text = rules_text.into();
        if rules_text.trim().is_empty() {
            return Err(PromptError::EmptyHeader {
                path: "<inline>".into(),
            });
        }
        if rules_text.contains(FORMAT_CONTRACT.trim()) {
            return Err(PromptError::ContractInRules);
        }
        Ok(Self {
            category,
            rules_text,
        })
    }

    pub fn rules_text(&self) -> &str {
        &self.rules_text
    }

    pub fn format_contract(&self) -> &'static str {
        FORMAT_CONTRACT
    }

    /// Rules followed by the contract: everything before the first item line.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.rules_text.len() + FORMAT_CONTRACT.len());
        s.push_str(self.rules_text.trim_end());
        s.push_str(FORMAT_CONTRACT);
        s
    }
}

pub fn load_header(path: impl AsRef<Path>, category: Category) -> Result<PromptHeader, PromptError> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if body.trim().is_empty() {
        return Err(PromptError::EmptyHeader {
            path: path.display().to_string(),
        });
    }
    PromptHeader::new(category, body)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub rendered: String,
    pub item_ids: Vec<String>,
}

/// Escapes text so it occupies exactly one line.
pub fn escape_item_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_item_text(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// The prompt line for one item, without the trailing newline.
pub fn item_line(item: &AnnotatedItem) -> String {
    format!("{}\t{}", item.id, escape_item_text(&item.text))
}

pub fn build_prompt(header: &PromptHeader, items: &[AnnotatedItem]) -> Result<PromptText, PromptError> {
    if items.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    let mut seen = HashSet::with_capacity(items.len());
    let mut rendered = header.render();
    let mut item_ids = Vec::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(PromptError::DuplicateIdInBatch(item.id.clone()));
        }
        rendered.push_str(&item_line(item));
        rendered.push('\n');
        item_ids.push(item.id.clone());
    }
    Ok(PromptText { rendered, item_ids })
}

/// Recovers `(id, escaped text)` pairs from a rendered prompt.
pub fn parse_item_section(rendered: &str) -> Result<Vec<(&str, &str)>, PromptError> {
    let (_, items) = rendered
        .split_once(FORMAT_CONTRACT)
        .ok_or(PromptError::MissingItemSection)?;
    items
        .lines()
        .enumerate()
        .map(|(i, line)| line.split_once('\t').ok_or(PromptError::MalformedItemLine(i + 1)))
        .collect()
}
