//! Ticket loading, cleaning and chronological splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AuthorRole {
    Requester,
    Resolver,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TicketStatus {
    Open,
    Resolved,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub author_role: AuthorRole,
    pub created_at: Option<DateTime<Utc>>,
    pub body: String,
}

/// One support case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: String,
    pub title: String,
    pub created_at: DateTime<Utc>,
    pub description: String,
    #[serde(default)]
    pub comments: Vec<Comment>,
    #[serde(default)]
    pub status: TicketStatus,
}

impl Ticket {
    /// Title, description and every comment body, newline separated.
    ///
    /// This is the document body of the raw-ticket knowledge base and the
    /// unit of the corpus volume measure.
    pub fn full_text(&self) -> String {
        let mut out = String::with_capacity(
            self.title.len() + self.description.len() + self.comments.len() * 64,
        );
        out.push_str(&self.title);
        out.push('\n');
        out.push_str(&self.description);
        for c in &self.comments {
            out.push('\n');
            out.push_str(&c.body);
        }
        out
    }

    fn sort_key(&self) -> (DateTime<Utc>, &str) {
        (self.created_at, self.id.as_str())
    }
}

/// A record that could not be turned into a [`Ticket`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based record number (line for JSONL, data row for CSV).
    pub record: usize,
    pub id: Option<String>,
    pub field: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub tickets: Vec<Ticket>,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown input format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no valid tickets ({} records rejected)", rejections.len())]
    NoValidTickets { rejections: Vec<Rejection> },
    #[error("duplicate ticket ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("ticket list is empty")]
    Empty,
    #[error("invalid split fractions {0:?}: must be non-negative and sum to 1")]
    BadFractions([f64; 3]),
}

/// Cleaning limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanLimits {
    pub max_field_chars: usize,
    pub max_comments: usize,
}

impl Default for CleanLimits {
    fn default() -> Self {
        Self {
            max_field_chars: 8_000,
            max_comments: 20,
        }
    }
}

/// Load tickets from a JSONL or CSV file.
pub fn load_tickets(path: &Path, format: InputFormat) -> Result<LoadReport, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw = match format {
        InputFormat::Jsonl => parse_jsonl(&text),
        InputFormat::Csv => parse_csv(&text)?,
    };
    finish_load(raw)
}

/// Parse tickets from in-memory JSONL text.
pub fn load_jsonl_str(text: &str) -> Result<LoadReport, CorpusError> {
    finish_load(parse_jsonl(text))
}

fn finish_load(raw: Vec<Result<Ticket, Rejection>>) -> Result<LoadReport, CorpusError> {
    let mut report = LoadReport::default();
    for (i, r) in raw.into_iter().enumerate() {
        match r {
            Ok(t) => {
                let cleaned = clean_ticket(&t, CleanLimits::default());
                if cleaned.title.is_empty() && cleaned.description.is_empty() {
                    report.rejections.push(Rejection {
                        record: i + 1,
                        id: Some(t.id.clone()),
                        field: Some("title".into()),
                        reason: "title and description are both empty after cleaning".into(),
                    });
                } else {
                    report.tickets.push(cleaned);
                }
            }
            Err(rej) => report.rejections.push(rej),
        }
    }
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for t in &report.tickets {
        if !seen.insert(t.id.as_str()) && !dups.contains(&t.id) {
            dups.push(t.id.clone());
        }
    }
    if !dups.is_empty() {
        dups.sort();
        return Err(CorpusError::DuplicateIds(dups));
    }
    if report.tickets.is_empty() {
        return Err(CorpusError::NoValidTickets {
            rejections: report.rejections,
        });
    }
    Ok(report)
}

fn reject(record: usize, id: Option<String>, field: &str, reason: impl Into<String>) -> Rejection {
    Rejection {
        record,
        id,
        field: Some(field.to_string()),
        reason: reason.into(),
    }
}

fn parse_time(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

fn parse_jsonl(text: &str) -> Vec<Result<Ticket, Rejection>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| ticket_from_json(i + 1, line))
        .collect()
}

fn ticket_from_json(record: usize, line: &str) -> Result<Ticket, Rejection> {
    let v: Value = serde_json::from_str(line).map_err(|e| Rejection {
        record,
        id: None,
        field: None,
        reason: format!("invalid JSON: {e}"),
    })?;
    let obj = v.as_object().ok_or_else(|| Rejection {
        record,
        id: None,
        field: None,
        reason: "record is not a JSON object".into(),
    })?;
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(reject(record, None, "id", "field `id` is empty or not a string")),
        None => return Err(reject(record, None, "id", "missing field `id`")),
    };
    let text_field = |name: &str| -> Result<String, Rejection> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(String::new()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(reject(record, Some(id.clone()), name, format!("field `{name}` is not a string"))),
        }
    };
    let title = text_field("title")?;
    let description = text_field("description")?;
    let created_at = match obj.get("created_at") {
        Some(Value::String(s)) => parse_time(s).ok_or_else(|| {
            reject(record, Some(id.clone()), "created_at", format!("unparseable timestamp `{s}`"))
        })?,
        Some(_) => return Err(reject(record, Some(id), "created_at", "field `created_at` is not a string")),
        None => return Err(reject(record, Some(id), "created_at", "missing field `created_at`")),
    };
    let mut comments = Vec::new();
    match obj.get("comments") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for item in items {
                let c = item.as_object().ok_or_else(|| {
                    reject(record, Some(id.clone()), "comments", "comment is not an object")
                })?;
                let author_role = match c.get("author_role").and_then(Value::as_str) {
                    Some(r) => parse_role(r),
                    None => AuthorRole::Unknown,
                };
                let created_at = c.get("created_at").and_then(Value::as_str).and_then(parse_time);
                let body = c.get("body").and_then(Value::as_str).unwrap_or("").to_string();
                comments.push(Comment {
                    author_role,
                    created_at,
                    body,
                });
            }
        }
        Some(_) => return Err(reject(record, Some(id), "comments", "field `comments` is not an array")),
    }
    let status = obj
        .get("status")
        .and_then(Value::as_str)
        .map(parse_status)
        .unwrap_or_default();
    Ok(Ticket {
        id,
        title,
        created_at,
        description,
        comments,
        status,
    })
}

fn parse_role(s: &str) -> AuthorRole {
    match s.trim().to_ascii_lowercase().as_str() {
        "requester" => AuthorRole::Requester,
        "resolver" => AuthorRole::Resolver,
        _ => AuthorRole::Unknown,
    }
}

fn parse_status(s: &str) -> TicketStatus {
    match s.trim().to_ascii_lowercase().as_str() {
        "open" => TicketStatus::Open,
        "resolved" | "closed" => TicketStatus::Resolved,
        _ => TicketStatus::Unknown,
    }
}

/// CSV comment field separator.
pub const CSV_COMMENT_SEPARATOR: &str = "|||";

fn parse_csv(text: &str) -> Result<Vec<Result<Ticket, Rejection>>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let cols: BTreeMap<&str, Option<usize>> = ["id", "title", "created_at", "description", "comments", "status"]
        .into_iter()
        .map(|n| (n, col(n)))
        .collect();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let record = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.push(Err(Rejection {
                    record,
                    id: None,
                    field: None,
                    reason: format!("malformed CSV row: {e}"),
                }));
                continue;
            }
        };
        let get = |name: &str| cols[name].and_then(|c| row.get(c)).map(str::to_string);
        let id = match get("id") {
            Some(s) if !s.trim().is_empty() => s.trim().to_string(),
            _ => {
                out.push(Err(reject(record, None, "id", "missing field `id`")));
                continue;
            }
        };
        let created_at = match get("created_at").as_deref().map(parse_time) {
            Some(Some(t)) => t,
            Some(None) => {
                out.push(Err(reject(record, Some(id), "created_at", "unparseable timestamp")));
                continue;
            }
            None => {
                out.push(Err(reject(record, Some(id), "created_at", "missing field `created_at`")));
                continue;
            }
        };
        let comments = get("comments")
            .map(|field| {
                field
                    .split(CSV_COMMENT_SEPARATOR)
                    .filter(|s| !s.trim().is_empty())
                    .map(csv_comment)
                    .collect()
            })
            .unwrap_or_default();
        out.push(Ok(Ticket {
            id,
            title: get("title").unwrap_or_default(),
            created_at,
            description: get("description").unwrap_or_default(),
            comments,
            status: get("status").as_deref().map(parse_status).unwrap_or_default(),
        }));
    }
    Ok(out)
}

// "resolver: body" prefixes carry the role; anything else is unknown.
fn csv_comment(segment: &str) -> Comment {
    let trimmed = segment.trim();
    for (prefix, role) in [("requester:", AuthorRole::Requester), ("resolver:", AuthorRole::Resolver)] {
        if trimmed.len() >= prefix.len() && trimmed[..prefix.len()].eq_ignore_ascii_case(prefix) {
            return Comment {
                author_role: role,
                created_at: None,
                body: trimmed[prefix.len()..].trim().to_string(),
            };
        }
    }
    Comment {
        author_role: AuthorRole::Unknown,
        created_at: None,
        body: trimmed.to_string(),
    }
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^<>]*>").unwrap())
}

fn decode_entities(s: &str) -> String {
    s.replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// Strip markup, collapse whitespace and truncate to `max_chars` at a
/// whitespace boundary.
pub fn clean_text(input: &str, max_chars: usize) -> String {
    // Entity decoding can expose new tags, so iterate to a fixpoint. Every
    // change shortens the text, so this terminates.
    let mut text = input.to_string();
    loop {
        let next = tag_re().replace_all(&decode_entities(&text), " ").into_owned();
        if next == text {
            break;
        }
        text = next;
    }
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    truncate_at_whitespace(&collapsed, max_chars)
}

/// Truncate to at most `max_chars` characters, cutting back to the last
/// whitespace so no word is split. Falls back to a hard cut when the first
/// `max_chars` characters contain no whitespace.
pub fn truncate_at_whitespace(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut = text
        .char_indices()
        .nth(max_chars)
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let head = &text[..cut];
    // The character right after the cut being whitespace means the head
    // already ends on a word boundary.
    if text[cut..].starts_with(char::is_whitespace) {
        return head.trim_end().to_string();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) if !head[..ws].trim_end().is_empty() => head[..ws].trim_end().to_string(),
        _ => head.to_string(),
    }
}

/// Normalize a ticket for prompting and indexing.
pub fn clean_ticket(ticket: &Ticket, limits: CleanLimits) -> Ticket {
    let comments = ticket
        .comments
        .iter()
        .map(|c| Comment {
            author_role: c.author_role,
            created_at: c.created_at,
            body: clean_text(&c.body, limits.max_field_chars),
        })
        .filter(|c| !c.body.is_empty())
        .take(limits.max_comments)
        .collect();
    Ticket {
        id: ticket.id.clone(),
        title: clean_text(&ticket.title, limits.max_field_chars),
        created_at: ticket.created_at,
        description: clean_text(&ticket.description, limits.max_field_chars),
        comments,
        status: ticket.status,
    }
}

/// Disjoint chronological partition of ticket ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub fractions: [f64; 3],
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Default train/validation/test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Split tickets by `(created_at, id)`: earliest to train, latest to test.
///
/// Validation and test sizes are floored; the remainder goes to train.
pub fn chronological_split(tickets: &[Ticket], fractions: [f64; 3]) -> Result<CorpusSplit, CorpusError> {
    if tickets.is_empty() {
        return Err(CorpusError::Empty);
    }
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(fractions));
    }
    let mut ordered: Vec<&Ticket> = tickets.iter().collect();
    ordered.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let n = ordered.len();
    let n_val = (fractions[1] * n as f64).floor() as usize;
    let n_test = (fractions[2] * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    let ids: Vec<String> = ordered.into_iter().map(|t| t.id.clone()).collect();
    Ok(CorpusSplit {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
        fractions,
    })
}

/// Look up tickets by id, preserving the order of `ids`.
pub fn select<'a>(tickets: &'a [Ticket], ids: &[String]) -> Vec<&'a Ticket> {
    let by_id: std::collections::HashMap<&str, &Ticket> =
        tickets.iter().map(|t| (t.id.as_str(), t)).collect();
    ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
}
