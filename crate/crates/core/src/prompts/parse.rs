//! Parsing of structured model output.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Pattern cap for top-level categories.
pub const CATEGORY_PATTERN_CAP: usize = 15;
/// Pattern cap for subcategories.
pub const SUBCATEGORY_PATTERN_CAP: usize = 10;
/// Maximum top-level assignments per ticket.
pub const MAX_ASSIGNMENTS: usize = 2;

const NAME_WORD_LIMIT: usize = 5;
const DESCRIPTION_WORD_LIMIT: usize = 50;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no balanced JSON object found")]
    NoJsonObject,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("missing or malformed field `{0}`")]
    MissingField(String),
    #[error("no helpfulness score found")]
    NoScore,
    #[error("helpfulness score {0} outside 1-5")]
    ScoreOutOfRange(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuredKind {
    Categories,
    Subcategories,
    Assignments,
    Judgment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCategory {
    pub name: String,
    pub description: String,
    pub identifying_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedCategories {
    pub categories: Vec<ParsedCategory>,
    pub merge_summary: Option<String>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAssignment {
    pub category_name: String,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedAssignments {
    pub assignments: Vec<ParsedAssignment>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedJudgment {
    pub score: u8,
    pub reasoning: String,
    pub missing_information: String,
    pub suggestions: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Categories(ParsedCategories),
    Assignments(ParsedAssignments),
    Judgment(ParsedJudgment),
}

/// Dispatch on `kind`.
pub fn parse_structured(kind: StructuredKind, text: &str) -> Result<Parsed, ParseError> {
    match kind {
        StructuredKind::Categories => parse_categories(text, false).map(Parsed::Categories),
        StructuredKind::Subcategories => parse_categories(text, true).map(Parsed::Categories),
        StructuredKind::Assignments => parse_assignments(text).map(Parsed::Assignments),
        StructuredKind::Judgment => parse_judgment(text).map(Parsed::Judgment),
    }
}

/// Return the first balanced `{...}` region, after dropping code-fence lines.
pub fn extract_json_block(text: &str) -> Result<String, ParseError> {
    let unfenced: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    let bytes = unfenced.as_bytes();
    let mut start = 0;
    while let Some(rel) = unfenced[start..].find('{') {
        let open = start + rel;
        if let Some(close) = balanced_end(bytes, open) {
            return Ok(unfenced[open..=close].to_string());
        }
        start = open + 1;
    }
    Err(ParseError::NoJsonObject)
}

// Index of the brace closing the one at `open`, honoring JSON strings.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn json_object(text: &str) -> Result<serde_json::Map<String, Value>, ParseError> {
    let block = extract_json_block(text)?;
    match serde_json::from_str::<Value>(&block) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ParseError::InvalidJson("top-level value is not an object".into())),
        Err(e) => Err(ParseError::InvalidJson(e.to_string())),
    }
}

fn str_field(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .map(|s| s.trim().to_string())
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Parse a category or subcategory taxonomy payload.
///
/// Pattern lists are trimmed, de-duplicated and clipped to the cap; long
/// names and descriptions are kept with a warning.
pub fn parse_categories(text: &str, subcategories: bool) -> Result<ParsedCategories, ParseError> {
    let obj = json_object(text)?;
    let keys: &[&str] = if subcategories {
        &["subcategories", "categories"]
    } else {
        &["categories", "subcategories"]
    };
    let items = keys
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_array))
        .ok_or_else(|| ParseError::MissingField(keys[0].to_string()))?;
    let cap = if subcategories {
        SUBCATEGORY_PATTERN_CAP
    } else {
        CATEGORY_PATTERN_CAP
    };
    let mut out = ParsedCategories {
        merge_summary: str_field(&obj, &["merge_summary"]),
        ..Default::default()
    };
    for (i, item) in items.iter().enumerate() {
        let Some(entry) = item.as_object() else {
            out.warnings.push(format!("entry {i} is not an object; skipped"));
            continue;
        };
        let name = str_field(entry, &["name"]).unwrap_or_default();
        if name.is_empty() {
            out.warnings.push(format!("entry {i} has no name; skipped"));
            continue;
        }
        let description = str_field(entry, &["description"]).unwrap_or_default();
        let mut patterns: Vec<String> = Vec::new();
        if let Some(list) = entry.get("identifying_patterns").and_then(Value::as_array) {
            for p in list.iter().filter_map(Value::as_str).map(str::trim) {
                if !p.is_empty() && !patterns.iter().any(|q| q == p) {
                    patterns.push(p.to_string());
                }
            }
        }
        if patterns.len() > cap {
            out.warnings.push(format!(
                "category `{name}` has {} identifying patterns; clipped to {cap}",
                patterns.len()
            ));
            patterns.truncate(cap);
        }
        if word_count(&name) > NAME_WORD_LIMIT {
            out.warnings.push(format!("category name `{name}` exceeds {NAME_WORD_LIMIT} words"));
        }
        if word_count(&description) > DESCRIPTION_WORD_LIMIT {
            out.warnings.push(format!("description of `{name}` exceeds {DESCRIPTION_WORD_LIMIT} words"));
        }
        out.categories.push(ParsedCategory {
            name,
            description,
            identifying_patterns: patterns,
        });
    }
    Ok(out)
}

/// Parse an assignment payload. Entries may name the target under
/// `category` or `subcategory`. More than two entries are cut to two.
pub fn parse_assignments(text: &str) -> Result<ParsedAssignments, ParseError> {
    let obj = json_object(text)?;
    let items = obj
        .get("assignments")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::MissingField("assignments".into()))?;
    let mut out = ParsedAssignments::default();
    for (i, item) in items.iter().enumerate() {
        let name = item
            .as_object()
            .and_then(|o| str_field(o, &["category", "subcategory", "category_name", "name"]))
            .unwrap_or_default();
        if name.is_empty() {
            out.warnings.push(format!("assignment {i} names no category; skipped"));
            continue;
        }
        let reasoning = item
            .as_object()
            .and_then(|o| str_field(o, &["reasoning"]))
            .unwrap_or_default();
        out.assignments.push(ParsedAssignment {
            category_name: name,
            reasoning,
        });
    }
    if out.assignments.len() > MAX_ASSIGNMENTS {
        out.warnings.push(format!(
            "{} assignments returned; keeping the first {MAX_ASSIGNMENTS}",
            out.assignments.len()
        ));
        out.assignments.truncate(MAX_ASSIGNMENTS);
    }
    Ok(out)
}

/// Parse the numbered judge output.
///
/// The score is the first integer on the "Helpfulness Score" line after
/// any parenthesised scale description, or on the following non-empty line.
pub fn parse_judgment(text: &str) -> Result<ParsedJudgment, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let idx = lines
        .iter()
        .position(|l| l.to_ascii_lowercase().contains("helpfulness score"))
        .ok_or(ParseError::NoScore)?;
    let line = lines[idx];
    let lower = line.to_ascii_lowercase();
    let mut tail = &line[lower.find("helpfulness score").unwrap() + "helpfulness score".len()..];
    if tail.trim_start().starts_with('(') {
        tail = tail.find(')').map_or("", |c| &tail[c + 1..]);
    }
    let score = first_integer(tail)
        .or_else(|| {
            lines[idx + 1..]
                .iter()
                .find(|l| !l.trim().is_empty())
                .and_then(|l| first_integer(l))
        })
        .ok_or(ParseError::NoScore)?;
    if !(1..=5).contains(&score) {
        return Err(ParseError::ScoreOutOfRange(score));
    }
    Ok(ParsedJudgment {
        score: score as u8,
        reasoning: section(&lines, "reasoning"),
        missing_information: section(&lines, "missing information"),
        suggestions: section(&lines, "improvement suggestions"),
    })
}

fn first_integer(s: &str) -> Option<i64> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let neg = s[..start].trim_end().ends_with('-') && s[..start].trim().len() <= 2;
    let digits: String = s[start..].chars().take_while(char::is_ascii_digit).collect();
    let v: i64 = digits.parse().ok()?;
    Some(if neg { -v } else { v })
}

// Text after "<label>:" up to the next numbered heading.
fn section(lines: &[&str], label: &str) -> String {
    let Some(start) = lines.iter().position(|l| l.to_ascii_lowercase().contains(label)) else {
        return String::new();
    };
    let first = lines[start];
    let mut parts = Vec::new();
    if let Some(colon) = first.find(':') {
        let rest = first[colon + 1..].trim();
        if !rest.is_empty() {
            parts.push(rest.to_string());
        }
    }
    for l in &lines[start + 1..] {
        if is_numbered_heading(l) {
            break;
        }
        if !l.trim().is_empty() {
            parts.push(l.trim().to_string());
        }
    }
    parts.join("\n")
}

fn is_numbered_heading(line: &str) -> bool {
    let t = line.trim_start().trim_start_matches(['*', '#', ' ']);
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && t[digits..].starts_with('.')
}

/// Matching key for category names: lowercase, punctuation removed,
/// whitespace collapsed.
pub fn normalize_name(name: &str) -> String {
    name.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// URL- and filename-safe id derived from the normalized name.
pub fn slugify(name: &str) -> String {
    let slug: String = normalize_name(name)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    let slug = slug.split('-').filter(|s| !s.is_empty()).collect::<Vec<_>>().join("-");
    if slug.is_empty() {
        "category".to_string()
    } else {
        slug
    }
}
