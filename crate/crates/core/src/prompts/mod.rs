//! Prompt registry and rendering.
//!
//! Template bodies live in `prompts/*.txt` at the crate root, one file per
//! template, and are compiled in. Slots are `{name}`; anything else in
//! braces (the JSON output examples) is literal text.

mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    extract_json_block, normalize_name, parse_assignments, parse_categories, parse_judgment, parse_structured,
    slugify, ParseError, Parsed, ParsedAssignment, ParsedAssignments, ParsedCategories, ParsedCategory,
    ParsedJudgment, StructuredKind, CATEGORY_PATTERN_CAP, MAX_ASSIGNMENTS, SUBCATEGORY_PATTERN_CAP,
};

/// Appended to the user text when a structured response fails to parse.
pub const REPAIR_SUFFIX: &str = "Your previous response was not valid JSON. Return ONLY the JSON object.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    CategoryDiscovery,
    CategoryMerge,
    SubcategoryDiscovery,
    TicketCategorization,
    SubcategoryCategorization,
    KnowledgeSynthesis,
    KnowledgeMerge,
    QueryGeneration,
    AnswerEvaluation,
    AnswerGeneration,
}

impl TemplateName {
    pub const ALL: [TemplateName; 10] = [
        Self::CategoryDiscovery,
        Self::CategoryMerge,
        Self::SubcategoryDiscovery,
        Self::TicketCategorization,
        Self::SubcategoryCategorization,
        Self::KnowledgeSynthesis,
        Self::KnowledgeMerge,
        Self::QueryGeneration,
        Self::AnswerEvaluation,
        Self::AnswerGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CategoryDiscovery => "category_discovery",
            Self::CategoryMerge => "category_merge",
            Self::SubcategoryDiscovery => "subcategory_discovery",
            Self::TicketCategorization => "ticket_categorization",
            Self::SubcategoryCategorization => "subcategory_categorization",
            Self::KnowledgeSynthesis => "knowledge_synthesis",
            Self::KnowledgeMerge => "knowledge_merge",
            Self::QueryGeneration => "query_generation",
            Self::AnswerEvaluation => "answer_evaluation",
            Self::AnswerGeneration => "answer_generation",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            Self::CategoryDiscovery => include_str!("../../prompts/category_discovery.txt"),
            Self::CategoryMerge => include_str!("../../prompts/category_merge.txt"),
            Self::SubcategoryDiscovery => include_str!("../../prompts/subcategory_discovery.txt"),
            Self::TicketCategorization => include_str!("../../prompts/ticket_categorization.txt"),
            Self::SubcategoryCategorization => include_str!("../../prompts/subcategory_categorization.txt"),
            Self::KnowledgeSynthesis => include_str!("../../prompts/knowledge_synthesis.txt"),
            Self::KnowledgeMerge => include_str!("../../prompts/knowledge_merge.txt"),
            Self::QueryGeneration => include_str!("../../prompts/query_generation.txt"),
            Self::AnswerEvaluation => include_str!("../../prompts/answer_evaluation.txt"),
            Self::AnswerGeneration => include_str!("../../prompts/answer_generation.txt"),
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Self::CategoryDiscovery => &["sample_tickets"],
            Self::CategoryMerge => &["category_sets_json"],
            Self::SubcategoryDiscovery => &["parent_category_name", "parent_category_description", "sample_tickets"],
            Self::TicketCategorization => &["title", "description", "categories"],
            Self::SubcategoryCategorization => &[
                "title",
                "description",
                "parent_category_name",
                "parent_category_description",
                "subcategories",
            ],
            Self::KnowledgeSynthesis => &["category_name", "category_description", "ticket_data"],
            Self::KnowledgeMerge => &["category_name", "category_description", "articles_to_merge"],
            Self::QueryGeneration => &["title", "description"],
            Self::AnswerEvaluation => &["question", "answer", "ticket_content"],
            Self::AnswerGeneration => &["articles", "question"],
        }
    }

    /// Whether the body is transcribed from the published prompt set (all
    /// but the answer-generation template).
    pub fn is_published(self) -> bool {
        self != Self::AnswerGeneration
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| RenderError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` is missing placeholder `{placeholder}`")]
    MissingPlaceholder { template: TemplateName, placeholder: String },
}

/// Rendered prompt text plus any non-fatal notes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Substitute `vars` into the named template. Values are inserted verbatim
/// and are never re-scanned for slots.
pub fn render(name: TemplateName, vars: &BTreeMap<&str, String>) -> Result<Rendered, RenderError> {
    let required = name.required_placeholders();
    if let Some(missing) = required.iter().find(|p| !vars.contains_key(**p)) {
        return Err(RenderError::MissingPlaceholder {
            template: name,
            placeholder: missing.to_string(),
        });
    }
    let warnings: Vec<String> = vars
        .keys()
        .filter(|k| !required.contains(k))
        .map(|k| format!("placeholder `{k}` is not used by template `{name}`"))
        .collect();
    for w in &warnings {
        tracing::warn!("{w}");
    }

    let body = name.body();
    let mut out = String::with_capacity(body.len() + vars.values().map(String::len).sum::<usize>());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let slot = after
            .find('}')
            .map(|close| &after[..close])
            .filter(|ident| required.contains(ident));
        match slot {
            Some(ident) => {
                out.push_str(&vars[ident]);
                rest = &after[ident.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(Rendered { text: out, warnings })
}

/// Convenience wrapper taking `(name, value)` pairs.
pub fn render_pairs(name: TemplateName, pairs: &[(&str, &str)]) -> Result<String, RenderError> {
    let vars: BTreeMap<&str, String> = pairs.iter().map(|(k, v)| (*k, v.to_string())).collect();
    render(name, &vars).map(|r| r.text)
}

/// Slot names (`{ident}` with `ident` in `[a-z_]`) present in `text`.
pub fn unresolved_slots(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find('}') {
            let ident = &after[..close];
            if !ident.is_empty() && ident.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                found.push(ident.to_string());
            }
        }
        rest = after;
    }
    found
}
