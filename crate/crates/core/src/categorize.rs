//! Ticket categorization against a discovered taxonomy.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentContext, AgentError, Role};
use crate::corpus::Ticket;
use crate::discovery::{Category, CategorySet};
use crate::prompts::{self, normalize_name, parse_assignments, TemplateName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Category,
    Subcategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub ticket_id: String,
    pub category_id: String,
    pub reasoning: String,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub ticket_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategorizedCorpus {
    pub assignments: Vec<Assignment>,
    pub uncategorized: Vec<String>,
    pub failed: Vec<Failure>,
}

impl CategorizedCorpus {
    /// Ticket ids assigned to `category_id`, in assignment order.
    pub fn pool(&self, category_id: &str) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|a| a.category_id == category_id)
            .map(|a| a.ticket_id.as_str())
            .collect()
    }

    /// Distinct ids that carry at least one assignment.
    pub fn assigned_ids(&self) -> std::collections::BTreeSet<&str> {
        self.assignments.iter().map(|a| a.ticket_id.as_str()).collect()
    }

    /// Number of distinct ticket ids accounted for across all three pools.
    pub fn accounted(&self) -> usize {
        self.assigned_ids().len() + self.uncategorized.len() + self.failed.len()
    }
}

/// Outcome of matching a model-echoed name against the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NameMatch {
    Found(String),
    Ambiguous(Vec<String>),
    NotFound,
}

/// Map a category name as echoed by the model back to a category id.
///
/// Exact normalized match wins; otherwise a unique prefix match, then a
/// unique containment match in either direction.
pub fn match_category_name(name: &str, candidates: &[&Category]) -> NameMatch {
    let norm = normalize_name(name);
    if norm.is_empty() {
        return NameMatch::NotFound;
    }
    if let Some(c) = candidates.iter().find(|c| normalize_name(&c.name) == norm) {
        return NameMatch::Found(c.id.clone());
    }
    let pick = |hits: Vec<&&Category>| match hits.len() {
        0 => None,
        1 => Some(NameMatch::Found(hits[0].id.clone())),
        _ => Some(NameMatch::Ambiguous(hits.iter().map(|c| c.id.clone()).collect())),
    };
    let prefix: Vec<&&Category> = candidates
        .iter()
        .filter(|c| {
            let cn = normalize_name(&c.name);
            cn.starts_with(&norm) || norm.starts_with(&cn)
        })
        .collect();
    if let Some(m) = pick(prefix) {
        return m;
    }
    let contains: Vec<&&Category> = candidates
        .iter()
        .filter(|c| {
            let cn = normalize_name(&c.name);
            cn.contains(&norm) || norm.contains(&cn)
        })
        .collect();
    pick(contains).unwrap_or(NameMatch::NotFound)
}

/// Resolve against the top-level categories of `categories`.
pub fn resolve_category_name(name: &str, categories: &CategorySet) -> Option<String> {
    match match_category_name(name, &categories.top_level()) {
        NameMatch::Found(id) => Some(id),
        NameMatch::Ambiguous(ids) => {
            tracing::warn!("category name `{name}` is ambiguous between {ids:?}; dropped");
            None
        }
        NameMatch::NotFound => None,
    }
}

/// Bulleted category listing used in categorization prompts.
pub fn format_category_list(categories: &[&Category]) -> String {
    categories
        .iter()
        .map(|c| {
            if c.identifying_patterns.is_empty() {
                format!("- {}: {}", c.name, c.description)
            } else {
                format!("- {}: {} (patterns: {})", c.name, c.description, c.identifying_patterns.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn assign(
    ctx: &AgentContext,
    template: TemplateName,
    prompt: String,
    ticket: &Ticket,
    candidates: &[&Category],
    level: Level,
    cap: usize,
) -> Result<Vec<Assignment>, AgentError> {
    let parsed = ctx.call_parsed(Role::Categorize, template, prompt, parse_assignments)?;
    for w in &parsed.warnings {
        tracing::warn!("ticket {}: {w}", ticket.id);
    }
    let mut out: Vec<Assignment> = Vec::new();
    for pa in parsed.assignments {
        let id = match match_category_name(&pa.category_name, candidates) {
            NameMatch::Found(id) => id,
            NameMatch::Ambiguous(ids) => {
                tracing::warn!("ticket {}: `{}` is ambiguous between {ids:?}; dropped", ticket.id, pa.category_name);
                continue;
            }
            NameMatch::NotFound => {
                tracing::warn!("ticket {}: unknown category `{}`; dropped", ticket.id, pa.category_name);
                continue;
            }
        };
        if out.iter().any(|a| a.category_id == id) {
            continue;
        }
        if out.len() == cap {
            tracing::warn!("ticket {}: more than {cap} assignments; extra dropped", ticket.id);
            break;
        }
        out.push(Assignment {
            ticket_id: ticket.id.clone(),
            category_id: id,
            reasoning: pa.reasoning,
            level,
        });
    }
    Ok(out)
}

/// Assign one ticket to at most two top-level categories.
pub fn categorize_ticket(
    ctx: &AgentContext,
    ticket: &Ticket,
    categories: &CategorySet,
) -> Result<Vec<Assignment>, AgentError> {
    let top = categories.top_level();
    let prompt = prompts::render_pairs(
        TemplateName::TicketCategorization,
        &[
            ("title", &ticket.title),
            ("description", &ticket.description),
            ("categories", &format_category_list(&top)),
        ],
    )?;
    assign(
        ctx,
        TemplateName::TicketCategorization,
        prompt,
        ticket,
        &top,
        Level::Category,
        prompts::MAX_ASSIGNMENTS,
    )
}

fn collect(tickets: &[&Ticket], results: Vec<Result<Vec<Assignment>, AgentError>>) -> CategorizedCorpus {
    let mut rows: Vec<(&str, Result<Vec<Assignment>, AgentError>)> =
        tickets.iter().map(|t| t.id.as_str()).zip(results).collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = CategorizedCorpus::default();
    for (id, r) in rows {
        match r {
            Ok(a) if a.is_empty() => out.uncategorized.push(id.to_string()),
            Ok(a) => out.assignments.extend(a),
            Err(e) => out.failed.push(Failure {
                ticket_id: id.to_string(),
                error: e.to_string(),
            }),
        }
    }
    out
}

/// Categorize every ticket; output is ordered by ticket id.
pub fn categorize_all(ctx: &AgentContext, tickets: &[&Ticket], categories: &CategorySet) -> CategorizedCorpus {
    assert!(!categories.top_level().is_empty(), "categorization needs a non-empty taxonomy");
    let results = ctx.fan_out(tickets, |t| categorize_ticket(ctx, t, categories));
    collect(tickets, results)
}

/// Assign each ticket to at most one subcategory of `parent`. Tickets left
/// unassigned land in `uncategorized`, the parent's residual pool.
pub fn categorize_into_subcategories(
    ctx: &AgentContext,
    parent: &Category,
    tickets: &[&Ticket],
    subcats: &CategorySet,
) -> CategorizedCorpus {
    let children: Vec<&Category> = subcats
        .categories
        .iter()
        .filter(|c| c.parent.as_deref() == Some(parent.id.as_str()))
        .collect();
    assert_eq!(children.len(), subcats.len(), "subcategories must all belong to `{}`", parent.id);
    let listing = format_category_list(&children);
    let results = ctx.fan_out(tickets, |t| {
        let prompt = prompts::render_pairs(
            TemplateName::SubcategoryCategorization,
            &[
                ("title", &t.title),
                ("description", &t.description),
                ("parent_category_name", &parent.name),
                ("parent_category_description", &parent.description),
                ("subcategories", &listing),
            ],
        )?;
        assign(ctx, TemplateName::SubcategoryCategorization, prompt, t, &children, Level::Subcategory, 1)
    });
    collect(tickets, results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FakeClock, Gateway, GatewayConfig, MockBackend};
    use crate::prompts::parse_categories;
    use chrono::{TimeZone, Utc};
    use std::sync::Arc;

    fn ctx(mock: Arc<MockBackend>) -> AgentContext {
        let gw = Gateway::with_clock(
            mock,
            GatewayConfig {
                requests_per_minute: 1_000_000,
                ..Default::default()
            },
            Arc::new(FakeClock::new()),
        )
        .unwrap();
        AgentContext::new(Arc::new(gw))
    }

    fn taxonomy(names: &[&str]) -> CategorySet {
        let cats: Vec<String> = names
            .iter()
            .map(|n| format!(r#"{{"name":"{n}","description":"about {n}","identifying_patterns":["{n}"]}}"#))
            .collect();
        let text = format!(r#"{{"categories":[{}]}}"#, cats.join(","));
        CategorySet::from_parsed(parse_categories(&text, false).unwrap(), None, 15)
    }

    fn ticket(id: &str, title: &str) -> Ticket {
        Ticket {
            id: id.into(),
            title: title.into(),
            created_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
            description: format!("details for {title}"),
            comments: vec![],
            status: Default::default(),
        }
    }

    #[test]
    fn resolution_rules() {
        let set = taxonomy(&["System Access Issues", "Warehouse Access Badges", "Inventory Counts"]);
        assert_eq!(resolve_category_name("System Access Issues", &set).as_deref(), Some("system-access-issues"));
        assert_eq!(resolve_category_name("system access issues ", &set).as_deref(), Some("system-access-issues"));
        assert_eq!(resolve_category_name("Inventory", &set).as_deref(), Some("inventory-counts"));
        assert_eq!(resolve_category_name("Access", &set), None);
        assert!(matches!(
            match_category_name("Access", &set.top_level()),
            NameMatch::Ambiguous(ids) if ids.len() == 2
        ));
        assert_eq!(resolve_category_name("Shipping", &set), None);
        assert_eq!(resolve_category_name("", &set), None);
    }

    #[test]
    fn single_empty_and_capped() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("Title: one", r#"{"assignments":[{"category":"Inventory Counts","reasoning":"counts"}]}"#, 0);
        mock.register_mock_rule("Title: none", r#"{"assignments":[]}"#, 0);
        mock.register_mock_rule(
            "Title: three",
            r#"{"assignments":[{"category":"Shipping"},{"category":"Inventory Counts"},{"category":"Returns"}]}"#,
            0,
        );
        let c = ctx(mock);
        let set = taxonomy(&["Inventory Counts", "Shipping", "Returns"]);
        let a = categorize_ticket(&c, &ticket("1", "one"), &set).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].reasoning, "counts");
        assert!(categorize_ticket(&c, &ticket("2", "none"), &set).unwrap().is_empty());
        let a = categorize_ticket(&c, &ticket("3", "three"), &set).unwrap();
        let ids: Vec<_> = a.iter().map(|x| x.category_id.as_str()).collect();
        assert_eq!(ids, vec!["shipping", "inventory-counts"]);
    }

    #[test]
    fn prompt_lists_patterns_and_omits_comments() {
        let mock = Arc::new(MockBackend::new());
        let seen = Arc::new(std::sync::Mutex::new(String::new()));
        let s = seen.clone();
        mock.register_fn("", move |r| {
            *s.lock().unwrap() = r.user_text.clone();
            Ok(r#"{"assignments":[]}"#.into())
        });
        let mut t = ticket("1", "pallet jam");
        t.comments.push(crate::corpus::Comment {
            author_role: crate::corpus::AuthorRole::Resolver,
            created_at: None,
            body: "reseated the conveyor sensor".into(),
        });
        categorize_ticket(&ctx(mock), &t, &taxonomy(&["Conveyor"])).unwrap();
        let prompt = seen.lock().unwrap();
        assert!(prompt.contains("patterns: Conveyor"));
        assert!(!prompt.contains("reseated"));
    }

    fn keyword_mock() -> Arc<MockBackend> {
        let mock = Arc::new(MockBackend::new());
        for (kw, cat) in [("alpha", "Alpha Work"), ("beta", "Beta Work"), ("gamma", "Gamma Work")] {
            mock.register_mock_rule(
                format!("Title: {kw}"),
                format!(r#"{{"assignments":[{{"category":"{cat}","reasoning":"{kw}"}}]}}"#),
                0,
            );
        }
        mock.register_mock_rule("Title: broken", "garbage", 0);
        mock
    }

    #[test]
    fn accounting_with_failure_and_ordering() {
        let set = taxonomy(&["Alpha Work", "Beta Work", "Gamma Work"]);
        let kws = ["alpha", "beta", "gamma", "broken"];
        let ts: Vec<Ticket> = (0..20)
            .rev()
            .map(|i| ticket(&format!("T{i:02}"), &format!("{} {i}", if i == 7 { "broken" } else { kws[i % 3] })))
            .collect();
        let refs: Vec<&Ticket> = ts.iter().collect();
        let c = ctx(keyword_mock());
        let out = categorize_all(&c, &refs, &set);
        assert_eq!(out.accounted(), 20);
        assert_eq!(out.failed.len(), 1);
        assert_eq!(out.failed[0].ticket_id, "T07");
        assert_eq!(out.assignments.len(), 19);
        let ids: Vec<_> = out.assignments.iter().map(|a| a.ticket_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);

        let seq = categorize_all(&ctx(keyword_mock()).with_max_parallel(1), &refs, &set);
        let wide = categorize_all(&ctx(keyword_mock()).with_max_parallel(8), &refs, &set);
        assert_eq!(seq, wide);
        assert_eq!(seq, out);
    }

    #[test]
    fn subcategory_assignment_single_and_residual() {
        let parent = Category {
            id: "ops".into(),
            name: "Ops".into(),
            description: "operations".into(),
            identifying_patterns: vec![],
            parent: None,
        };
        let text = r#"{"subcategories":[{"name":"Dock","description":"d","identifying_patterns":[]},
            {"name":"Yard","description":"y","identifying_patterns":[]}]}"#;
        let subs = CategorySet::from_parsed(parse_categories(text, true).unwrap(), Some(&parent), 10);
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("Title: dock", r#"{"assignments":[{"subcategory":"Dock"},{"subcategory":"Yard"}]}"#, 0);
        mock.register_mock_rule("Title: lost", r#"{"assignments":[{"subcategory":"Attic"}]}"#, 0);
        mock.register_mock_rule("Title: ", r#"{"assignments":[]}"#, 0);
        let ts = [ticket("a", "dock 1"), ticket("b", "lost 2"), ticket("c", "other 3")];
        let refs: Vec<&Ticket> = ts.iter().collect();
        let out = categorize_into_subcategories(&ctx(mock), &parent, &refs, &subs);
        assert_eq!(out.assignments.len(), 1);
        assert_eq!(out.assignments[0].category_id, "ops--dock");
        assert_eq!(out.assignments[0].level, Level::Subcategory);
        assert_eq!(out.uncategorized, vec!["b", "c"]);
    }
}
