//! Pulls a thought tree or an expression out of free-form model output.

use serde_json::Value;
use thiserror::Error;

use crate::dsl::{parse_with, AlphaExpr, DslError, Feature, OperatorTable};
use crate::thought_tree::{ThoughtTree, Violation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error("no thought tree found in the reply")]
    NoTreeFound,
    #[error("thought tree is invalid: {}", describe_violations(.violations))]
    TreeInvalid { candidate: String, violations: Vec<Violation> },
    #[error("no expression found in the reply")]
    NoExpressionFound,
    #[error("could not parse `{candidate}`: {error}")]
    ParseFailed { candidate: String, error: DslError },
}

fn describe_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Every JSON object in `text` that deserializes as a thought tree, in order
/// of appearance. Nested trees inside a found tree are not reported again.
pub fn find_trees(text: &str) -> Vec<Result<ThoughtTree, (String, Vec<Violation>)>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            let end = start + stream.byte_offset();
            if value.get("label").is_some() {
                let raw = text[start..end].to_string();
                match ThoughtTree::from_value(&value) {
                    Ok(tree) => {
                        let violations = tree.validate();
                        out.push(if violations.is_empty() { Ok(tree) } else { Err((raw, violations)) });
                        pos = end;
                        continue;
                    }
                    Err(crate::thought_tree::TreeError::Invalid(violations)) => {
                        out.push(Err((raw, violations)));
                        pos = end;
                        continue;
                    }
                    Err(_) => {}
                }
            }
        }
        pos = start + 1;
    }
    out
}

/// The first valid tree in `text`; prose and code fences around it are ignored.
pub fn extract_tree(text: &str) -> Result<ThoughtTree, ExtractError> {
    let mut first_invalid = None;
    for found in find_trees(text) {
        match found {
            Ok(tree) => return Ok(tree),
            Err((candidate, violations)) => {
                first_invalid.get_or_insert(ExtractError::TreeInvalid { candidate, violations });
            }
        }
    }
    Err(first_invalid.unwrap_or(ExtractError::NoTreeFound))
}

pub fn extract_expression(text: &str) -> Result<AlphaExpr, ExtractError> {
    extract_expression_with(text, OperatorTable::standard())
}

/// The first candidate, in text order, that parses: whole fenced blocks, single
/// lines, inline code spans, and text after a colon.
pub fn extract_expression_with(text: &str, table: &OperatorTable) -> Result<AlphaExpr, ExtractError> {
    let mut first_plausible: Option<(String, DslError)> = None;
    for candidate in candidates(text) {
        match parse_with(&candidate, table) {
            Ok(e) => return Ok(e),
            Err(error) => {
                if first_plausible.is_none() && is_plausible(&candidate, table) {
                    first_plausible = Some((candidate, error));
                }
            }
        }
    }
    match first_plausible {
        Some((candidate, error)) => Err(ExtractError::ParseFailed { candidate, error }),
        None => Err(ExtractError::NoExpressionFound),
    }
}

fn clean(s: &str) -> String {
    let s = s.trim();
    let s = s
        .strip_prefix("- ")
        .or_else(|| s.strip_prefix("* "))
        .unwrap_or(s)
        .trim();
    let s = s.trim_matches('`').trim();
    let s = s.strip_suffix('.').unwrap_or(s).trim();
    s.strip_suffix(';').unwrap_or(s).trim().to_string()
}

fn candidates(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: &str, out: &mut Vec<String>| {
        let c = clean(s);
        if !c.is_empty() && !out.contains(&c) {
            out.push(c);
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut k = 0;
    while k < lines.len() {
        let line = lines[k];
        if line.trim_start().starts_with("```") {
            let close = (k + 1..lines.len()).find(|&j| lines[j].trim_start().starts_with("```"));
            let end = close.unwrap_or(lines.len());
            let body: Vec<&str> = lines[k + 1..end].iter().copied().filter(|l| !l.trim().is_empty()).collect();
            push(&body.join(" "), &mut out);
            for l in &body {
                line_candidates(l, &mut out, &mut push);
            }
            k = end + 1;
            continue;
        }
        line_candidates(line, &mut out, &mut push);
        k += 1;
    }
    out
}

fn line_candidates(line: &str, out: &mut Vec<String>, push: &mut impl FnMut(&str, &mut Vec<String>)) {
    push(line, out);
    let mut rest = line;
    while let Some(a) = rest.find('`') {
        let after = &rest[a + 1..];
        match after.find('`') {
            Some(b) => {
                push(&after[..b], out);
                rest = &after[b + 1..];
            }
            None => break,
        }
    }
    if let Some(i) = line.find(':') {
        push(&line[i + 1..], out);
    }
    if let Some(i) = line.rfind(':') {
        push(&line[i + 1..], out);
    }
}

fn is_plausible(candidate: &str, table: &OperatorTable) -> bool {
    candidate
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .any(|w| w.parse::<Feature>().is_ok() || table.lookup(w).is_some())
}
