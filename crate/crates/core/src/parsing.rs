//! Output check for model replies.
//!
//! A reply is accepted only if every non-blank line is `id,label`, each
//! dispatched id appears exactly once, and nothing else is present. One
//! surrounding triple-backtick fence is tolerated. Any other deviation is a
//! [`ValidationError`], which the client treats as "reject and retry".

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::label::Label;

/// How many offending ids/lines a detail message spells out.
const DETAIL_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReply {
    /// Accepted records, in expected-id order.
    pub records: Vec<(String, Label)>,
    /// Lines set aside without error (the fence wrapper), 1-based.
    pub rejected_lines: Vec<(usize, String)>,
}

impl ParsedReply {
    pub fn label_of(&self, id: &str) -> Option<Label> {
        self.records.iter().find(|(i, _)| i == id).map(|(_, l)| *l)
    }
}

/// Reasons ordered from least to most specific.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValidationKind {
    FormatMismatch,
    IdSetMismatch,
    InvalidLabel,
    DuplicateId,
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationKind::FormatMismatch => "format mismatch",
            ValidationKind::IdSetMismatch => "id set mismatch",
            ValidationKind::InvalidLabel => "invalid label",
            ValidationKind::DuplicateId => "duplicate id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}: {detail}")]
pub struct ValidationError {
    pub kind: ValidationKind,
    pub detail: String,
    /// Offending 1-based line numbers, ascending.
    pub lines: Vec<usize>,
    /// Offending ids.
    pub ids: Vec<String>,
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    let mut s = items
        .iter()
        .take(DETAIL_LIMIT)
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if items.len() > DETAIL_LIMIT {
        s.push_str(&format!(" and {} more", items.len() - DETAIL_LIMIT));
    }
    s
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Line indices (0-based) of a single wrapping fence, if present.
fn fence_lines(lines: &[&str]) -> Option<(usize, usize)> {
    let first = lines.iter().position(|l| !l.trim().is_empty())?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty())?;
    (first < last && is_fence(lines[first]) && lines[last].trim() == "```").then_some((first, last))
}

pub fn parse_response(raw: &str, expected_ids: &[String]) -> Result<ParsedReply, ValidationError> {
    let expected: HashSet<&str> = expected_ids.iter().map(String::as_str).collect();
    let lines: Vec<&str> = raw.lines().collect();
    let fence = fence_lines(&lines);

    let mut rejected_lines = Vec::new();
    let mut found: HashMap<&str, Label> = HashMap::new();
    let mut occurrences: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut invalid: Vec<(usize, &str, &str)> = Vec::new();
    let mut unexpected: Vec<(usize, &str)> = Vec::new();
    let mut malformed: Vec<usize> = Vec::new();

    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        if let Some((open, close)) = fence {
            if i == open || i == close {
                rejected_lines.push((lineno, "code fence".to_string()));
                continue;
            }
        }
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, label)) = line.rsplit_once(',') else {
            malformed.push(lineno);
            continue;
        };
        let (id, label) = (id.trim(), label.trim());
        if id.is_empty() {
            malformed.push(lineno);
            continue;
        }
        let parsed = label.parse::<Label>().ok();
        match (expected.get(id), parsed) {
            (Some(&id), Some(l)) => {
                occurrences.entry(id).or_default().push(lineno);
                found.entry(id).or_insert(l);
            }
            (Some(&id), None) => {
                occurrences.entry(id).or_default().push(lineno);
                invalid.push((lineno, id, label));
            }
            (None, Some(_)) => unexpected.push((lineno, id)),
            (None, None) => malformed.push(lineno),
        }
    }

    let mut dups: Vec<(&str, &Vec<usize>)> = occurrences
        .iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(k, v)| (*k, v))
        .collect();
    if !dups.is_empty() {
        dups.sort_by_key(|(_, v)| v[0]);
        let mut dup_lines: Vec<usize> = dups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        dup_lines.sort_unstable();
        let described: Vec<String> = dups
            .iter()
            .map(|(id, v)| format!("{id} (lines {})", list(v)))
            .collect();
        return Err(ValidationError {
            kind: ValidationKind::DuplicateId,
            detail: format!("ids listed more than once: {}", list(&described)),
            lines: dup_lines,
            ids: dups.iter().map(|(id, _)| id.to_string()).collect(),
        });
    }

    if !invalid.is_empty() {
        let described: Vec<String> = invalid
            .iter()
            .map(|(n, id, l)| format!("line {n} (id {id}): {l:?}"))
            .collect();
        return Err(ValidationError {
            kind: ValidationKind::InvalidLabel,
            detail: format!(
                "labels outside Yes/No/Unclear on {}",
                list(&described)
            ),
            lines: invalid.iter().map(|(n, _, _)| *n).collect(),
            ids: invalid.iter().map(|(_, id, _)| id.to_string()).collect(),
        });
    }

    let missing: Vec<&str> = expected_ids
        .iter()
        .map(String::as_str)
        .filter(|id| !occurrences.contains_key(id))
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing ids: {}", list(&missing)));
        }
        if !unexpected.is_empty() {
            let described: Vec<String> = unexpected
                .iter()
                .map(|(n, id)| format!("{id} (line {n})"))
                .collect();
            parts.push(format!("unexpected ids: {}", list(&described)));
        }
        return Err(ValidationError {
            kind: ValidationKind::IdSetMismatch,
            detail: parts.join("; "),
            lines: unexpected.iter().map(|(n, _)| *n).collect(),
            ids: missing
                .iter()
                .copied()
                .chain(unexpected.iter().map(|(_, id)| *id))
                .map(str::to_string)
                .collect(),
        });
    }

    if !malformed.is_empty() {
        return Err(ValidationError {
            kind: ValidationKind::FormatMismatch,
            detail: format!("lines not of the form id,label: {}", list(&malformed)),
            lines: malformed,
            ids: Vec::new(),
        });
    }

    let records = expected_ids
        .iter()
        .map(|id| (id.clone(), found[id.as_str()]))
        .collect();
    Ok(ParsedReply {
        records,
        rejected_lines,
    })
}

/// Canonical `id,label` lines, each newline-terminated.
pub fn canonicalize_reply(reply: &ParsedReply) -> String {
    let mut out = String::new();
    for (id, label) in &reply.records {
        out.push_str(id);
        out.push(',');
        out.push_str(label.as_str());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn accepts_well_formed() {
        let r = parse_response("a,Yes\nb,No", &ids(&["a", "b"])).unwrap();
        assert_eq!(
            r.records,
            vec![("a".to_string(), Label::Yes), ("b".to_string(), Label::No)]
        );
    }

    #[test]
    fn missing_id() {
        let e = parse_response("a,Yes", &ids(&["a", "b"])).unwrap_err();
        assert_eq!(e.kind, ValidationKind::IdSetMismatch);
        assert_eq!(e.ids, ["b"]);
        assert!(e.detail.contains('b'));
    }

    #[test]
    fn invalid_label_names_line() {
        let e = parse_response("a,Maybe\nb,No", &ids(&["a", "b"])).unwrap_err();
        assert_eq!(e.kind, ValidationKind::InvalidLabel);
        assert_eq!(e.lines, [1]);
        assert!(e.detail.contains("line 1"));
    }

    #[test]
    fn tolerates_whitespace_case_and_fence() {
        let raw = "\n```csv\n  a , yes \n\nb,UNCLEAR\n```\n";
        let r = parse_response(raw, &ids(&["a", "b"])).unwrap();
        assert_eq!(r.label_of("a"), Some(Label::Yes));
        assert_eq!(r.label_of("b"), Some(Label::Unclear));
        assert_eq!(r.rejected_lines.len(), 2);
    }

    #[test]
    fn only_one_fence_is_stripped() {
        let raw = "```\n```\na,Yes\n```\n```";
        let e = parse_response(raw, &ids(&["a"])).unwrap_err();
        assert_eq!(e.kind, ValidationKind::FormatMismatch);
        assert_eq!(e.lines, [2, 4]);
    }

    #[test]
    fn prose_is_format_mismatch() {
        let e = parse_response("Sure! Here are the labels:\na,Yes", &ids(&["a"])).unwrap_err();
        assert_eq!(e.kind, ValidationKind::FormatMismatch);
        assert_eq!(e.lines, [1]);
        let e = parse_response("a,Yes\nb,No because it mentions sleep, clearly", &ids(&["a", "b"]))
            .unwrap_err();
        // the last comma splits off "clearly", so the id is unknown prose
        assert_eq!(e.kind, ValidationKind::IdSetMismatch);
    }

    #[test]
    fn specificity_order() {
        let exp = ids(&["a", "b", "c"]);
        // duplicate beats everything
        let e = parse_response("a,Yes\na,No\nb,Maybe\nzz,Yes\nhello", &exp).unwrap_err();
        assert_eq!(e.kind, ValidationKind::DuplicateId);
        assert_eq!(e.lines, [1, 2]);
        // invalid label beats id mismatch
        let e = parse_response("a,Yes\nb,Maybe\nzz,Yes", &exp).unwrap_err();
        assert_eq!(e.kind, ValidationKind::InvalidLabel);
        // id mismatch beats format
        let e = parse_response("a,Yes\nb,No\nhello", &exp).unwrap_err();
        assert_eq!(e.kind, ValidationKind::IdSetMismatch);
        let e = parse_response("a,Yes\nb,No\nc,No\nhello", &exp).unwrap_err();
        assert_eq!(e.kind, ValidationKind::FormatMismatch);
    }

    #[test]
    fn unexpected_id() {
        let e = parse_response("a,Yes\nq,No", &ids(&["a"])).unwrap_err();
        assert_eq!(e.kind, ValidationKind::IdSetMismatch);
        assert_eq!(e.ids, ["q"]);
        assert_eq!(e.lines, [2]);
    }

    #[test]
    fn labels_are_never_coerced() {
        for bad in ["Y", "unclear.", "N/A", "0", "-1", "Yes No"] {
            let e = parse_response(&format!("a,{bad}"), &ids(&["a"])).unwrap_err();
            assert_eq!(e.kind, ValidationKind::InvalidLabel, "{bad}");
        }
    }

    #[test]
    fn canonical_form() {
        let r = parse_response("b,No\na,yes", &ids(&["a", "b"])).unwrap();
        assert_eq!(canonicalize_reply(&r), "a,Yes\nb,No\n");
        let single = parse_response("a,No", &ids(&["a"])).unwrap();
        assert_eq!(canonicalize_reply(&single), "a,No\n");
        let again = parse_response(&canonicalize_reply(&r), &ids(&["a", "b"])).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn ids_may_contain_commas() {
        let r = parse_response("x,1,Yes", &ids(&["x,1"])).unwrap();
        assert_eq!(r.label_of("x,1"), Some(Label::Yes));
    }

    #[test]
    fn long_lists_are_truncated_in_detail() {
        let exp: Vec<String> = (0..50).map(|i| format!("id{i}")).collect();
        let e = parse_response("", &exp).unwrap_err();
        assert_eq!(e.ids.len(), 50);
        assert!(e.detail.contains("and 40 more"));
    }
}
