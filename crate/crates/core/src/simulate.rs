//! Scripted agents for offline runs.
//!
//! Installs one [`MockBackend`] rule per template. Each rule reads the
//! rendered prompt and answers the way a careful model would for the
//! synthetic corpus: taxonomy and assignments come from the keyword
//! lexicon, articles are assembled from ticket text, and the judge scores
//! answers by how much of the reference resolution they carry.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::llm::MockBackend;
use crate::prompts::normalize_name;
use crate::rag::tokenize;
use crate::synthetic::{detect_subtopic, detect_topic, lexicon, topic_by_name};

/// Substrings that identify each template's rendered prompt.
pub mod phrases {
    pub const CATEGORY_DISCOVERY: &str = "discover knowledge categories";
    pub const CATEGORY_MERGE: &str = "merge these category sets";
    pub const SUBCATEGORY_DISCOVERY: &str = "discover SUBCATEGORIES";
    pub const TICKET_CATEGORIZATION: &str = "into predefined knowledge categories";
    pub const SUBCATEGORY_CATEGORIZATION: &str = "most appropriate subcategory";
    pub const KNOWLEDGE_SYNTHESIS: &str = "Create a CONCISE";
    pub const KNOWLEDGE_MERGE: &str = "merging multiple knowledge articles";
    pub const QUERY_GENERATION: &str = "generate a concise query";
    pub const ANSWER_GENERATION: &str = "Answer the user's supply-chain question";
    pub const ANSWER_EVALUATION: &str = "expert evaluator";
}

const MAX_ISSUES: usize = 4;
const MAX_TIPS: usize = 8;
const ANSWER_ARTICLES: usize = 3;

/// Register every scripted agent on `mock`.
pub fn install(mock: &MockBackend) {
    use phrases::*;
    mock.register_fn(CATEGORY_DISCOVERY, |r| Ok(discover_categories(&r.user_text)));
    mock.register_fn(CATEGORY_MERGE, |r| Ok(merge_categories(&r.user_text)));
    mock.register_fn(SUBCATEGORY_DISCOVERY, |r| Ok(discover_subcategories(&r.user_text)));
    mock.register_fn(TICKET_CATEGORIZATION, |r| Ok(categorize(&r.user_text)));
    mock.register_fn(SUBCATEGORY_CATEGORIZATION, |r| Ok(subcategorize(&r.user_text)));
    mock.register_fn(KNOWLEDGE_SYNTHESIS, |r| Ok(synthesize(&r.user_text)));
    mock.register_fn(KNOWLEDGE_MERGE, |r| Ok(merge_articles(&r.user_text)));
    mock.register_fn(QUERY_GENERATION, |r| Ok(query(&r.user_text)));
    mock.register_fn(ANSWER_GENERATION, |r| Ok(answer(&r.user_text)));
    mock.register_fn(ANSWER_EVALUATION, |r| Ok(judge(&r.user_text)));
}

/// A mock with every scripted agent installed.
pub fn scripted_backend() -> MockBackend {
    let mock = MockBackend::new();
    install(&mock);
    mock
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let Some(i) = text.find(start) else { return "" };
    let rest = &text[i + start.len()..];
    match rest.find(end) {
        Some(j) => &rest[..j],
        None => rest,
    }
}

fn line_after<'a>(text: &'a str, label: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(label))
        .unwrap_or("")
        .trim()
}

fn topic_json(t: usize) -> Value {
    let topic = &lexicon()[t];
    json!({
        "name": topic.name,
        "description": topic.description,
        "identifying_patterns": topic.keywords().collect::<Vec<_>>(),
    })
}

fn subtopic_json(t: usize, s: usize) -> Value {
    let topic = &lexicon()[t];
    let sub = &topic.subtopics[s];
    json!({
        "name": sub.name,
        "description": sub.description,
        "identifying_patterns": sub.keywords,
        "parent_category": topic.name,
    })
}

fn sample_lines(prompt: &str) -> Vec<&str> {
    between(prompt, "```\n", "\n```").lines().filter(|l| !l.trim().is_empty()).collect()
}

fn discover_categories(prompt: &str) -> String {
    let found: BTreeSet<usize> = sample_lines(prompt).into_iter().filter_map(detect_topic).collect();
    json!({"categories": found.into_iter().map(topic_json).collect::<Vec<_>>()}).to_string()
}

fn discover_subcategories(prompt: &str) -> String {
    let Some(t) = topic_by_name(line_after(prompt, "Name: ")) else {
        return json!({"subcategories": []}).to_string();
    };
    let found: BTreeSet<usize> = sample_lines(prompt)
        .into_iter()
        .filter_map(|l| detect_subtopic(t, l))
        .collect();
    json!({"subcategories": found.into_iter().map(|s| subtopic_json(t, s)).collect::<Vec<_>>()}).to_string()
}

fn collect_names(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            if let Some(Value::String(n)) = m.get("name") {
                out.push(normalize_name(n));
            }
            m.values().for_each(|x| collect_names(x, out));
        }
        Value::Array(a) => a.iter().for_each(|x| collect_names(x, out)),
        _ => {}
    }
}

fn collect_digests<'a>(v: &'a Value, out: &mut Vec<&'a str>) {
    match v {
        Value::Object(m) => {
            if let Some(Value::Array(a)) = m.get("sample_tickets") {
                out.extend(a.iter().filter_map(Value::as_str));
            }
            m.values().for_each(|x| collect_digests(x, out));
        }
        Value::Array(a) => a.iter().for_each(|x| collect_digests(x, out)),
        _ => {}
    }
}

fn merge_categories(prompt: &str) -> String {
    let payload: Value = serde_json::from_str(between(prompt, "```\n", "\n```")).unwrap_or(Value::Null);
    let mut names = Vec::new();
    collect_names(&payload, &mut names);
    let mut digests = Vec::new();
    collect_digests(&payload, &mut digests);
    let mut topics = BTreeSet::new();
    let mut subs = BTreeSet::new();
    for n in &names {
        for (t, topic) in lexicon().iter().enumerate() {
            if normalize_name(topic.name) == *n {
                topics.insert(t);
            }
            for (s, sub) in topic.subtopics.iter().enumerate() {
                if normalize_name(sub.name) == *n {
                    subs.insert((t, s));
                }
            }
        }
    }
    topics.extend(digests.into_iter().filter_map(detect_topic));
    let mut out: Vec<Value> = topics.into_iter().map(topic_json).collect();
    out.extend(subs.into_iter().map(|(t, s)| subtopic_json(t, s)));
    json!({"categories": out, "merge_summary": "consolidated by exact name"}).to_string()
}

fn ticket_text(prompt: &str) -> String {
    format!("{}\n{}", line_after(prompt, "Title: "), line_after(prompt, "Description: "))
}

fn categorize(prompt: &str) -> String {
    let listed = between(prompt, "# Available Categories\n", "\n# Task");
    let assignments: Vec<Value> = detect_topic(&ticket_text(prompt))
        .map(|t| lexicon()[t].name)
        .filter(|name| listed.lines().any(|l| l.starts_with(&format!("- {name}:"))))
        .map(|name| json!({"category": name, "reasoning": "keywords match"}))
        .into_iter()
        .collect();
    json!({"assignments": assignments}).to_string()
}

fn subcategorize(prompt: &str) -> String {
    let parent = between(prompt, "# Main Category\n", ":");
    let listed = between(prompt, "# Available Subcategories\n", "\n# Task");
    let assignments: Vec<Value> = topic_by_name(parent)
        .and_then(|t| detect_subtopic(t, &ticket_text(prompt)).map(|s| lexicon()[t].subtopics[s].name))
        .filter(|name| listed.lines().any(|l| l.starts_with(&format!("- {name}:"))))
        .map(|name| json!({"subcategory": name, "reasoning": "keywords match"}))
        .into_iter()
        .collect();
    json!({"assignments": assignments}).to_string()
}

fn push_unique(list: &mut Vec<String>, item: &str, cap: usize) {
    let item = item.trim();
    if !item.is_empty() && list.len() < cap && !list.iter().any(|x| x == item) {
        list.push(item.to_string());
    }
}

// CamelCase tokens such as system names.
fn systems(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in text.split(|c: char| !c.is_ascii_alphanumeric()) {
        let caps = w.chars().filter(char::is_ascii_uppercase).count();
        if caps >= 2 && w.chars().next().is_some_and(|c| c.is_ascii_uppercase()) && w.chars().any(|c| c.is_ascii_lowercase()) {
            push_unique(&mut out, w, MAX_ISSUES);
        }
    }
    out
}

fn render_article(name: &str, issues: &[String], tips: &[String], resources: &[String]) -> String {
    let mut s = format!("# {name}: Resolution Guide\n\n## Common Issues\n");
    for i in issues {
        s.push_str(&format!("- {i}\n"));
    }
    s.push_str("\n## Tips for Resolution\n");
    for t in tips {
        s.push_str(&format!("- {t}\n"));
    }
    if !resources.is_empty() {
        s.push_str("\n## Resources\n");
        for r in resources {
            s.push_str(&format!("- {r}\n"));
        }
    }
    s
}

fn synthesize(prompt: &str) -> String {
    let name = line_after(prompt, "Name: ");
    let data = between(prompt, "# Tickets in this Category\n", "\n# Task");
    let mut issues = Vec::new();
    let mut tips = Vec::new();
    for line in data.lines() {
        if let Some(rest) = line.strip_prefix("## Ticket ") {
            if let Some((_, title)) = rest.split_once(": ") {
                push_unique(&mut issues, title, MAX_ISSUES);
            }
        } else if let Some(body) = line.strip_prefix("- [resolver] ") {
            push_unique(&mut tips, body, MAX_TIPS);
        }
    }
    render_article(name, &issues, &tips, &systems(&tips.join(" ")))
}

fn bullets_under<'a>(text: &'a str, heading: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut inside = false;
    for line in text.lines() {
        if line.starts_with("## ") || line.starts_with("# ") {
            inside = line.trim() == heading;
        } else if inside {
            if let Some(b) = line.strip_prefix("- ") {
                out.push(b);
            }
        }
    }
    out
}

fn merge_articles(prompt: &str) -> String {
    let name = line_after(prompt, "Name: ");
    let body = between(prompt, "# Knowledge Articles to Merge\n", "\n# Task");
    let mut issues = Vec::new();
    let mut tips = Vec::new();
    let mut resources = Vec::new();
    bullets_under(body, "## Common Issues").into_iter().for_each(|b| push_unique(&mut issues, b, MAX_ISSUES));
    bullets_under(body, "## Tips for Resolution").into_iter().for_each(|b| push_unique(&mut tips, b, MAX_TIPS));
    bullets_under(body, "## Resources").into_iter().for_each(|b| push_unique(&mut resources, b, MAX_ISSUES));
    render_article(name, &issues, &tips, &resources)
}

fn query(prompt: &str) -> String {
    let title = line_after(prompt, "Title: ");
    format!("How do I resolve this: {}?", title.trim_end_matches(['.', '?']))
}

fn answer(prompt: &str) -> String {
    let block = between(prompt, "# Knowledge Articles\n", "\n# Question\n");
    let mut titles = Vec::new();
    let mut tips = Vec::new();
    for article in block.split("--- Article ").skip(1).take(ANSWER_ARTICLES) {
        let (head, body) = article.split_once('\n').unwrap_or((article, ""));
        let title = head.split_once(": ").map_or(head, |(_, t)| t);
        titles.push(title.split(" [").next().unwrap_or(title).trim().to_string());
        let structured = bullets_under(body, "## Tips for Resolution");
        if structured.is_empty() {
            // Unstructured ticket text: everything after title and description.
            body.lines().skip(2).for_each(|l| push_unique(&mut tips, l, MAX_TIPS));
        } else {
            structured.into_iter().for_each(|b| push_unique(&mut tips, b, MAX_TIPS));
        }
    }
    if titles.is_empty() {
        return "The articles do not cover this question.".to_string();
    }
    let mut s = format!("Based on {}:\n", titles.join("; "));
    for t in &tips {
        s.push_str(&format!("- {t}\n"));
    }
    s
}

const STOPWORDS: &[&str] = &[
    "after", "from", "into", "that", "then", "they", "this", "with", "were", "once", "since", "their", "each",
    "within", "could", "next", "later", "line", "have", "been",
];

fn content_terms(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.len() >= 4 && t.chars().all(|c| c.is_ascii_alphabetic()) && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn judge(prompt: &str) -> String {
    let answer_text = between(prompt, "# Answer to Evaluate\n", "\n# Original Ticket");
    let reference = between(prompt, "# Original Ticket (Reference)\n", "\n# Evaluation Task");
    let resolution: String = reference
        .lines()
        .filter_map(|l| l.strip_prefix("- [resolver] "))
        .collect::<Vec<_>>()
        .join(" ");
    let wanted = content_terms(&resolution);
    let have = content_terms(answer_text);
    let (score, reasoning) = if wanted.is_empty() {
        (3, "the reference ticket has no recorded resolution".to_string())
    } else {
        let hit = wanted.iter().filter(|w| have.contains(*w)).count();
        let frac = hit as f64 / wanted.len() as f64;
        (
            1 + (4.0 * frac).round() as u8,
            format!("covers {hit} of {} resolution terms", wanted.len()),
        )
    };
    let missing: Vec<&String> = wanted.iter().filter(|w| !have.contains(*w)).take(5).collect();
    format!(
        "1. Helpfulness Score (1-5): {score}\n2. Reasoning: {reasoning}\n3. Missing Information: {}\n4. Improvement Suggestions: state the concrete fix from the ticket",
        if missing.is_empty() {
            "none".to_string()
        } else {
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{parse_assignments, parse_categories, parse_judgment};

    #[test]
    fn categorization_picks_listed_topic() {
        let prompt = "You are categorizing a supply chain ticket into predefined knowledge categories.\n\n# Ticket Information\nTitle: Carrier missed pickup at FC123\nDescription: The carrier did not show.\n\n# Available Categories\n- Shipment Delays: late (patterns: carrier, badge)\n- Site Access: doors\n\n# Task\n";
        let a = parse_assignments(&categorize(prompt)).unwrap();
        assert_eq!(a.assignments.len(), 1);
        assert_eq!(a.assignments[0].category_name, "Shipment Delays");
        let unlisted = prompt.replace("- Shipment Delays: late (patterns: carrier, badge)\n", "");
        assert!(parse_assignments(&categorize(&unlisted)).unwrap().assignments.is_empty());
    }

    #[test]
    fn discovery_finds_topics_in_sample() {
        let prompt = "x\n```\n[T1] Badge denied at FC100 — badge\n[T2] Invoice mismatch for FC200 — invoice\n```\n";
        let c = parse_categories(&discover_categories(prompt), false).unwrap();
        let names: Vec<_> = c.categories.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["Site Access", "Purchase Order Errors"]);
    }

    #[test]
    fn merge_unions_by_name() {
        let prompt = "merge these category sets\n```\n[{\"categories\":[{\"name\":\"Site Access\"}]},{\"categories\":[{\"name\":\"site access\"},{\"name\":\"Label Printing\"}]}]\n```\n";
        let c = parse_categories(&merge_categories(prompt), false).unwrap();
        assert_eq!(c.categories.len(), 2);
    }

    #[test]
    fn synthesis_and_merge_keep_sections() {
        let prompt = "Name: Label Printing\nDescription: d\n\n# Tickets in this Category\n## Ticket A: Printer offline\nDescription: x\nComments:\n- [requester] help\n- [resolver] Power cycled the unit in PrintHub.\n\n# Task\nCreate a CONCISE";
        let a = synthesize(prompt);
        assert!(a.starts_with("# Label Printing"));
        assert_eq!(bullets_under(&a, "## Tips for Resolution"), vec!["Power cycled the unit in PrintHub."]);
        assert_eq!(bullets_under(&a, "## Resources"), vec!["PrintHub"]);
        let m = merge_articles(&format!(
            "Name: Label Printing\n\n# Knowledge Articles to Merge\n## Article 1\n{a}\n\n## Article 2\n{a}\n\n# Task\n"
        ));
        assert_eq!(bullets_under(&m, "## Tips for Resolution").len(), 1);
    }

    #[test]
    fn judge_rewards_coverage() {
        let p = |ans: &str| {
            format!("expert evaluator\n# Question\nq\n\n# Answer to Evaluate\n{ans}\n\n# Original Ticket (Reference)\n## Ticket A: t\nDescription: d\nComments:\n- [resolver] Replaced the worn network cable in PrintHub.\n\n# Evaluation Task\n")
        };
        let full = parse_judgment(&judge(&p("Replaced the worn network cable in PrintHub"))).unwrap();
        let none = parse_judgment(&judge(&p("No idea."))).unwrap();
        assert_eq!(full.score, 5);
        assert_eq!(none.score, 1);
    }
}
