//! Knowledge synthesis: condense each category's ticket pool into markdown
//! articles and assemble the knowledge base.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentContext, AgentError, Role};
use crate::categorize::{categorize_into_subcategories, CategorizedCorpus};
use crate::corpus::{AuthorRole, Ticket};
use crate::discovery::{discover_subcategories, Category, CategorySet, DiscoveryConfig, DiscoveryError};
use crate::prompts::{self, TemplateName};

/// Soft upper bound on article length, in words.
pub const ARTICLE_WORD_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Standard,
    Batch,
    Hierarchical,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Standard => "standard",
            Strategy::Batch => "batch",
            Strategy::Hierarchical => "hierarchical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisThresholds {
    pub standard_max: usize,
    pub hierarchical_min: usize,
    pub batch_size: usize,
}

impl Default for SynthesisThresholds {
    fn default() -> Self {
        Self {
            standard_max: 10,
            hierarchical_min: 50,
            batch_size: 10,
        }
    }
}

impl SynthesisThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.standard_max < 1 || self.standard_max > self.hierarchical_min {
            return Err(format!(
                "thresholds need 1 <= standard_max ({}) <= hierarchical_min ({})",
                self.standard_max, self.hierarchical_min
            ));
        }
        if self.batch_size < 1 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// `[1, standard_max)` standard, `[standard_max, hierarchical_min]` batch,
/// above that hierarchical.
pub fn select_strategy(pool_size: usize, t: &SynthesisThresholds) -> Strategy {
    if pool_size < t.standard_max {
        Strategy::Standard
    } else if pool_size <= t.hierarchical_min {
        Strategy::Batch
    } else {
        Strategy::Hierarchical
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeArticle {
    pub id: String,
    pub category_id: String,
    pub title: String,
    pub body: String,
    pub source_ticket_ids: Vec<String>,
    pub strategy: Strategy,
    pub word_count: usize,
}

impl KnowledgeArticle {
    /// Article file contents with a front-matter block.
    pub fn to_markdown(&self) -> String {
        let sources = self
            .source_ticket_ids
            .iter()
            .map(|s| serde_json::to_string(s).unwrap())
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "---\nid: {}\ncategory_id: {}\nstrategy: {}\ntitle: {}\nsource_ticket_ids: [{}]\n---\n{}",
            self.id,
            self.category_id,
            self.strategy,
            serde_json::to_string(&self.title).unwrap(),
            sources,
            self.body
        )
    }

    /// Inverse of [`KnowledgeArticle::to_markdown`].
    pub fn from_markdown(text: &str) -> Option<Self> {
        let rest = text.strip_prefix("---\n")?;
        let end = rest.find("\n---\n")?;
        let (head, body) = (&rest[..end], &rest[end + 5..]);
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for line in head.lines() {
            let (k, v) = line.split_once(": ")?;
            fields.insert(k, v);
        }
        let strategy = match *fields.get("strategy")? {
            "standard" => Strategy::Standard,
            "batch" => Strategy::Batch,
            "hierarchical" => Strategy::Hierarchical,
            _ => return None,
        };
        Some(Self {
            id: fields.get("id")?.to_string(),
            category_id: fields.get("category_id")?.to_string(),
            title: serde_json::from_str(fields.get("title")?).ok()?,
            source_ticket_ids: serde_json::from_str(fields.get("source_ticket_ids")?).ok()?,
            strategy,
            word_count: word_count(body),
            body: body.to_string(),
        })
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Title from the first markdown heading or `Title:` line, else `fallback`.
pub fn extract_title(body: &str, fallback: &str) -> String {
    for line in body.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let stripped = t.trim_start_matches('#').trim();
        let stripped = stripped.trim_start_matches("1.").trim();
        let stripped = stripped.trim_matches('*').trim();
        let stripped = stripped
            .strip_prefix("Title:")
            .or_else(|| stripped.strip_prefix("Title"))
            .map(|s| s.trim_matches(|c: char| c == '*' || c == ':' || c.is_whitespace()))
            .unwrap_or(stripped);
        if (t.starts_with('#') || t.to_ascii_lowercase().contains("title")) && !stripped.is_empty() {
            return stripped.to_string();
        }
    }
    fallback.to_string()
}

/// Ticket block for synthesis prompts. Comments are included since they
/// carry the resolutions.
pub fn format_ticket_data(tickets: &[&Ticket]) -> String {
    let mut out = String::new();
    for (i, t) in tickets.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("## Ticket {}: {}\nDescription: {}\n", t.id, t.title, t.description));
        if !t.comments.is_empty() {
            out.push_str("Comments:\n");
            for c in &t.comments {
                let who = match c.author_role {
                    AuthorRole::Requester => "requester",
                    AuthorRole::Resolver => "resolver",
                    AuthorRole::Unknown => "comment",
                };
                out.push_str(&format!("- [{who}] {}\n", c.body));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SynthesisError {
    #[error("blank synthesis response for `{0}`")]
    Blank(String),
    #[error("every synthesis batch for `{category}` failed: {first}")]
    AllBatchesFailed { category: String, first: Box<SynthesisError> },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}

fn article(
    id: &str,
    category: &Category,
    text: String,
    sources: Vec<String>,
    strategy: Strategy,
) -> Result<KnowledgeArticle, SynthesisError> {
    let body = text.trim().to_string();
    if body.is_empty() {
        return Err(SynthesisError::Blank(category.id.clone()));
    }
    let wc = word_count(&body);
    if wc > ARTICLE_WORD_LIMIT {
        tracing::warn!("article `{id}` has {wc} words, above the {ARTICLE_WORD_LIMIT}-word guideline");
    }
    Ok(KnowledgeArticle {
        id: id.to_string(),
        category_id: category.id.clone(),
        title: extract_title(&body, &category.name),
        body: body + "\n",
        source_ticket_ids: sources,
        strategy,
        word_count: wc,
    })
}

fn ids(tickets: &[&Ticket]) -> Vec<String> {
    tickets.iter().map(|t| t.id.clone()).collect()
}

/// One synthesis call over the whole pool.
pub fn synthesize_standard(
    ctx: &AgentContext,
    category: &Category,
    tickets: &[&Ticket],
) -> Result<KnowledgeArticle, SynthesisError> {
    synthesize_as(ctx, &category.id, category, tickets, Strategy::Standard)
}

fn synthesize_as(
    ctx: &AgentContext,
    id: &str,
    category: &Category,
    tickets: &[&Ticket],
    strategy: Strategy,
) -> Result<KnowledgeArticle, SynthesisError> {
    assert!(!tickets.is_empty(), "synthesis needs at least one ticket");
    let prompt = prompts::render_pairs(
        TemplateName::KnowledgeSynthesis,
        &[
            ("category_name", &category.name),
            ("category_description", &category.description),
            ("ticket_data", &format_ticket_data(tickets)),
        ],
    )
    .map_err(AgentError::from)?;
    let text = ctx.call_text(Role::Synthesize, TemplateName::KnowledgeSynthesis, prompt)?;
    article(id, category, text, ids(tickets), strategy)
}

/// Disjoint batches synthesized in parallel, then merged.
pub fn synthesize_batched(
    ctx: &AgentContext,
    category: &Category,
    tickets: &[&Ticket],
    batch_size: usize,
) -> Result<KnowledgeArticle, SynthesisError> {
    batched_as(ctx, &category.id, category, tickets, batch_size, Strategy::Batch)
}

fn batched_as(
    ctx: &AgentContext,
    id: &str,
    category: &Category,
    tickets: &[&Ticket],
    batch_size: usize,
    strategy: Strategy,
) -> Result<KnowledgeArticle, SynthesisError> {
    let batches: Vec<&[&Ticket]> = tickets.chunks(batch_size.max(1)).collect();
    let results = ctx.fan_out(&batches, |b| synthesize_as(ctx, id, category, b, strategy));
    let mut articles = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(a) => articles.push(a),
            Err(e) => {
                tracing::warn!("category `{}` batch {i} failed and was skipped: {e}", category.id);
                first_err.get_or_insert(e);
            }
        }
    }
    if articles.is_empty() {
        return Err(SynthesisError::AllBatchesFailed {
            category: category.id.clone(),
            first: Box::new(first_err.unwrap()),
        });
    }
    merge_articles(ctx, id, category, articles, strategy)
}

fn merge_block(articles: &[KnowledgeArticle]) -> String {
    articles
        .iter()
        .enumerate()
        .map(|(i, a)| format!("## Article {}\n{}", i + 1, a.body.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Merge articles into one. A single article passes through untouched; a
/// set too large for the prompt budget is merged pairwise level by level.
fn merge_articles(
    ctx: &AgentContext,
    id: &str,
    category: &Category,
    mut articles: Vec<KnowledgeArticle>,
    strategy: Strategy,
) -> Result<KnowledgeArticle, SynthesisError> {
    while articles.len() > 1 {
        if merge_block(&articles).len() <= ctx.prompt_budget_chars {
            return merge_call(ctx, id, category, &articles, strategy);
        }
        let pairs: Vec<&[KnowledgeArticle]> = articles.chunks(2).collect();
        let merged = ctx.fan_out(&pairs, |p| {
            if p.len() == 1 {
                Ok(p[0].clone())
            } else {
                merge_call(ctx, id, category, p, strategy)
            }
        });
        articles = merged.into_iter().collect::<Result<Vec<_>, _>>()?;
    }
    Ok(articles.pop().unwrap())
}

fn merge_call(
    ctx: &AgentContext,
    id: &str,
    category: &Category,
    articles: &[KnowledgeArticle],
    strategy: Strategy,
) -> Result<KnowledgeArticle, SynthesisError> {
    let prompt = prompts::render_pairs(
        TemplateName::KnowledgeMerge,
        &[
            ("category_name", &category.name),
            ("category_description", &category.description),
            ("articles_to_merge", &merge_block(articles)),
        ],
    )
    .map_err(AgentError::from)?;
    let text = ctx.call_text(Role::Synthesize, TemplateName::KnowledgeMerge, prompt)?;
    let sources = articles.iter().flat_map(|a| a.source_ticket_ids.iter().cloned()).collect();
    article(id, category, text, sources, strategy)
}

/// Settings for the hierarchical path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct HierarchyConfig {
    pub thresholds: SynthesisThresholds,
    pub discovery: DiscoveryConfig,
}

/// Articles plus the subcategories they were built from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HierarchicalOutput {
    pub articles: Vec<KnowledgeArticle>,
    pub subcategories: CategorySet,
    pub residual: Vec<String>,
}

/// Id of the parent-level article covering tickets no subcategory took.
pub fn residual_id(parent_id: &str) -> String {
    format!("{parent_id}--residual")
}

/// Subcategory discovery, assignment, and per-subcategory synthesis capped
/// at batch. Falls back to one batched article when no subcategories emerge.
pub fn synthesize_hierarchical(
    ctx: &AgentContext,
    category: &Category,
    tickets: &[&Ticket],
    config: &HierarchyConfig,
) -> Result<HierarchicalOutput, SynthesisError> {
    let t = &config.thresholds;
    let subs = discover_subcategories(ctx, category, tickets, &config.discovery)?;
    if subs.is_empty() {
        tracing::warn!("no subcategories found for `{}`; using batch synthesis", category.id);
        let a = batched_as(ctx, &category.id, category, tickets, t.batch_size, Strategy::Hierarchical)?;
        return Ok(HierarchicalOutput {
            articles: vec![a],
            ..Default::default()
        });
    }
    let assigned = categorize_into_subcategories(ctx, category, tickets, &subs);
    let by_id: BTreeMap<&str, &Ticket> = tickets.iter().map(|t| (t.id.as_str(), *t)).collect();
    let pool_of = |ids: Vec<&str>| -> Vec<&Ticket> { ids.into_iter().map(|i| by_id[i]).collect() };

    let mut jobs: Vec<(String, &Category, Vec<&Ticket>)> = subs
        .categories
        .iter()
        .map(|s| (s.id.clone(), s, pool_of(assigned.pool(&s.id))))
        .filter(|(_, _, pool)| !pool.is_empty())
        .collect();
    let residual_ids: Vec<&str> = assigned
        .uncategorized
        .iter()
        .map(String::as_str)
        .chain(assigned.failed.iter().map(|f| f.ticket_id.as_str()))
        .collect();
    let residual: Vec<String> = residual_ids.iter().map(|s| s.to_string()).collect();
    if !residual_ids.is_empty() {
        let mut pool = pool_of(residual_ids);
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        jobs.push((residual_id(&category.id), category, pool));
    }

    let results = ctx.fan_out(&jobs, |(id, cat, pool)| {
        let mut a = match select_strategy(pool.len(), t) {
            Strategy::Standard => synthesize_as(ctx, id, cat, pool, Strategy::Hierarchical),
            _ => batched_as(ctx, id, cat, pool, t.batch_size, Strategy::Hierarchical),
        }?;
        a.category_id = cat.id.clone();
        Ok::<_, SynthesisError>(a)
    });
    let mut articles = Vec::new();
    for ((id, _, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(a) => articles.push(a),
            Err(e) => tracing::warn!("article `{id}` failed: {e}"),
        }
    }
    if articles.is_empty() {
        return Err(SynthesisError::AllBatchesFailed {
            category: category.id.clone(),
            first: Box::new(SynthesisError::Blank(category.id.clone())),
        });
    }
    Ok(HierarchicalOutput {
        articles,
        subcategories: subs,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category_id: String,
    pub pool_size: usize,
    pub strategy: Strategy,
    pub article_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbManifest {
    pub article_count: usize,
    pub category_count: usize,
    pub subcategory_count: usize,
    pub corpus_chars: usize,
    pub kb_chars: usize,
    pub volume_ratio: f64,
    pub uncategorized_count: usize,
    pub failed_ticket_count: usize,
    pub failed_categories: Vec<String>,
    pub categories: Vec<CategoryReport>,
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub articles: Vec<KnowledgeArticle>,
    pub taxonomy: CategorySet,
    pub manifest: KbManifest,
}

/// Byte length of the ticket text a raw index would hold.
pub fn corpus_chars(tickets: &[&Ticket]) -> usize {
    tickets.iter().map(|t| t.full_text().len()).sum()
}

pub fn kb_chars(articles: &[KnowledgeArticle]) -> usize {
    articles.iter().map(|a| a.body.len()).sum()
}

/// Synthesize every category pool and compute the manifest. `tickets` is
/// the corpus the assignments were made over; its volume is the
/// denominator of the compaction ratio.
pub fn build_knowledge_base(
    ctx: &AgentContext,
    corpus: &CategorizedCorpus,
    taxonomy: &CategorySet,
    tickets: &[&Ticket],
    config: &HierarchyConfig,
    config_digest: &str,
) -> KnowledgeBase {
    let by_id: BTreeMap<&str, &Ticket> = tickets.iter().map(|t| (t.id.as_str(), *t)).collect();
    let mut top: Vec<&Category> = taxonomy.top_level();
    top.sort_by(|a, b| a.id.cmp(&b.id));
    let jobs: Vec<(&Category, Vec<&Ticket>)> = top
        .into_iter()
        .map(|c| {
            let pool: Vec<&Ticket> = corpus.pool(&c.id).into_iter().filter_map(|id| by_id.get(id).copied()).collect();
            (c, pool)
        })
        .filter(|(_, pool)| !pool.is_empty())
        .collect();

    let results = ctx.fan_out(&jobs, |(cat, pool)| {
        let strategy = select_strategy(pool.len(), &config.thresholds);
        let out = match strategy {
            Strategy::Standard => synthesize_standard(ctx, cat, pool).map(|a| HierarchicalOutput {
                articles: vec![a],
                ..Default::default()
            }),
            Strategy::Batch => synthesize_batched(ctx, cat, pool, config.thresholds.batch_size).map(|a| {
                HierarchicalOutput {
                    articles: vec![a],
                    ..Default::default()
                }
            }),
            Strategy::Hierarchical => synthesize_hierarchical(ctx, cat, pool, config),
        };
        (strategy, out)
    });

    let mut articles = Vec::new();
    let mut full = taxonomy.clone();
    let mut reports = Vec::new();
    let mut failed_categories = Vec::new();
    for ((cat, pool), (strategy, out)) in jobs.iter().zip(results) {
        let mut report = CategoryReport {
            category_id: cat.id.clone(),
            pool_size: pool.len(),
            strategy,
            article_ids: vec![],
            error: None,
        };
        match out {
            Ok(h) => {
                full.extend_children(&h.subcategories);
                report.article_ids = h.articles.iter().map(|a| a.id.clone()).collect();
                articles.extend(h.articles);
            }
            Err(e) => {
                tracing::warn!("category `{}` produced no article: {e}", cat.id);
                report.error = Some(e.to_string());
                failed_categories.push(cat.id.clone());
            }
        }
        reports.push(report);
    }

    let corpus_chars = corpus_chars(tickets);
    let kb_chars = kb_chars(&articles);
    let assigned: BTreeSet<&str> = corpus.assigned_ids();
    let manifest = KbManifest {
        article_count: articles.len(),
        category_count: full.top_level().len(),
        subcategory_count: full.len() - full.top_level().len(),
        corpus_chars,
        kb_chars,
        volume_ratio: if corpus_chars == 0 { 0.0 } else { kb_chars as f64 / corpus_chars as f64 },
        uncategorized_count: corpus.uncategorized.len(),
        failed_ticket_count: corpus.failed.len(),
        failed_categories,
        categories: reports,
        config_digest: config_digest.to_string(),
        seed: config.discovery.seed,
    };
    debug_assert!(articles
        .iter()
        .all(|a| a.source_ticket_ids.iter().all(|s| assigned.contains(s.as_str()))));
    KnowledgeBase {
        articles,
        taxonomy: full,
        manifest,
    }
}
