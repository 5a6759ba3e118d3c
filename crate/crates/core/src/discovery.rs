//! Category discovery: build a taxonomy from a ticket sample, either as
//! independent batches merged afterwards or by iterative refinement.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agent::{AgentContext, AgentError, Role};
use crate::corpus::Ticket;
use crate::prompts::{self, normalize_name, parse_categories, slugify, ParsedCategories, TemplateName};

/// A taxonomy node. Subcategories carry their parent's id as `parent` and
/// as an id prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    pub name: String,
    pub description: String,
    pub identifying_patterns: Vec<String>,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiscoveryMode {
    #[default]
    Batch,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub mode: DiscoveryMode,
    pub batch_count: usize,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub failed_batches: usize,
    #[serde(default)]
    pub empty_batches: usize,
    #[serde(default)]
    pub merge_summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CategorySet {
    pub categories: Vec<Category>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl CategorySet {
    /// Build from parsed model output. Entries whose normalized names
    /// collide are merged (patterns unioned up to `pattern_cap`).
    pub fn from_parsed(parsed: ParsedCategories, parent: Option<&Category>, pattern_cap: usize) -> Self {
        let mut set = CategorySet {
            warnings: parsed.warnings,
            ..Default::default()
        };
        set.provenance.merge_summary = parsed.merge_summary;
        let mut by_norm: BTreeMap<String, usize> = BTreeMap::new();
        for pc in parsed.categories {
            let norm = normalize_name(&pc.name);
            if let Some(&i) = by_norm.get(&norm) {
                set.warnings
                    .push(format!("duplicate category `{}` merged into `{}`", pc.name, set.categories[i].name));
                let existing = &mut set.categories[i];
                for p in pc.identifying_patterns {
                    if existing.identifying_patterns.len() < pattern_cap && !existing.identifying_patterns.contains(&p) {
                        existing.identifying_patterns.push(p);
                    }
                }
                if existing.description.is_empty() {
                    existing.description = pc.description;
                }
                continue;
            }
            let base = match parent {
                Some(p) => format!("{}--{}", p.id, slugify(&pc.name)),
                None => slugify(&pc.name),
            };
            let id = set.unique_id(base);
            by_norm.insert(norm, set.categories.len());
            let mut patterns = pc.identifying_patterns;
            patterns.truncate(pattern_cap);
            set.categories.push(Category {
                id,
                name: pc.name,
                description: pc.description,
                identifying_patterns: patterns,
                parent: parent.map(|p| p.id.clone()),
            });
        }
        for w in &set.warnings {
            tracing::warn!("{w}");
        }
        set
    }

    fn unique_id(&self, base: String) -> String {
        if !self.categories.iter().any(|c| c.id == base) {
            return base;
        }
        (2..)
            .map(|n| format!("{base}-{n}"))
            .find(|cand| !self.categories.iter().any(|c| &c.id == cand))
            .unwrap()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn top_level(&self) -> Vec<&Category> {
        self.categories.iter().filter(|c| c.parent.is_none()).collect()
    }

    pub fn children(&self, parent_id: &str) -> Vec<&Category> {
        self.categories
            .iter()
            .filter(|c| c.parent.as_deref() == Some(parent_id))
            .collect()
    }

    /// Append subcategories of an existing top-level category.
    pub fn extend_children(&mut self, children: &CategorySet) {
        for c in &children.categories {
            let id = self.unique_id(c.id.clone());
            self.categories.push(Category { id, ..c.clone() });
        }
    }

    /// Checks id uniqueness, top-level name uniqueness and depth <= 2.
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = std::collections::HashSet::new();
        let mut names = std::collections::HashSet::new();
        for c in &self.categories {
            if !ids.insert(c.id.as_str()) {
                return Err(format!("duplicate category id `{}`", c.id));
            }
            match &c.parent {
                None => {
                    if !names.insert(normalize_name(&c.name)) {
                        return Err(format!("duplicate top-level name `{}`", c.name));
                    }
                }
                Some(p) => match self.get(p) {
                    Some(parent) if parent.parent.is_none() => {}
                    Some(_) => return Err(format!("`{}` nests deeper than two levels", c.id)),
                    None => return Err(format!("`{}` has unknown parent `{p}`", c.id)),
                },
            }
        }
        Ok(())
    }

    /// JSON payload used in merge prompts.
    fn prompt_json(&self) -> serde_json::Value {
        json!({
            "categories": self.categories.iter().map(|c| json!({
                "name": c.name,
                "description": c.description,
                "identifying_patterns": c.identifying_patterns,
            })).collect::<Vec<_>>()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub mode: DiscoveryMode,
    pub sample_size: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            mode: DiscoveryMode::Batch,
            sample_size: 200,
            batch_size: 50,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DiscoveryError {
    #[error("no tickets to discover categories from")]
    EmptyInput,
    #[error("every discovery batch failed; first error: {0}")]
    AllBatchesFailed(AgentError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Uniform sample without replacement, deterministic under `seed`. Returns
/// every ticket when `n` covers the whole input.
pub fn sample_tickets<'a>(train: &[&'a Ticket], n: usize, seed: u64) -> Result<Vec<&'a Ticket>, DiscoveryError> {
    if train.is_empty() {
        return Err(DiscoveryError::EmptyInput);
    }
    let n = n.max(1);
    if n >= train.len() {
        return Ok(train.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, train.len(), n).into_iter().map(|i| train[i]).collect())
}

const DIGEST_DESCRIPTION_CHARS: usize = 400;

/// `[id] title — first 400 chars of description`
pub fn ticket_digest(t: &Ticket) -> String {
    let desc: String = t.description.chars().take(DIGEST_DESCRIPTION_CHARS).collect();
    format!("[{}] {} — {}", t.id, t.title, desc)
}

fn digests(tickets: &[&Ticket]) -> String {
    tickets.iter().map(|t| ticket_digest(t)).collect::<Vec<_>>().join("\n")
}

/// Which prompt family a discovery run uses.
#[derive(Debug, Clone, Copy)]
enum Level<'a> {
    Top,
    Sub(&'a Category),
}

impl Level<'_> {
    fn cap(self) -> usize {
        match self {
            Level::Top => prompts::CATEGORY_PATTERN_CAP,
            Level::Sub(_) => prompts::SUBCATEGORY_PATTERN_CAP,
        }
    }
}

fn discover_one(ctx: &AgentContext, level: Level<'_>, tickets: &[&Ticket]) -> Result<CategorySet, AgentError> {
    let sample = digests(tickets);
    let (template, prompt, parent) = match level {
        Level::Top => (
            TemplateName::CategoryDiscovery,
            prompts::render_pairs(TemplateName::CategoryDiscovery, &[("sample_tickets", &sample)])?,
            None,
        ),
        Level::Sub(parent) => (
            TemplateName::SubcategoryDiscovery,
            prompts::render_pairs(
                TemplateName::SubcategoryDiscovery,
                &[
                    ("parent_category_name", &parent.name),
                    ("parent_category_description", &parent.description),
                    ("sample_tickets", &sample),
                ],
            )?,
            Some(parent),
        ),
    };
    let sub = parent.is_some();
    let parsed = ctx.call_parsed(Role::Discovery, template, prompt, |t| parse_categories(t, sub))?;
    Ok(CategorySet::from_parsed(parsed, parent, level.cap()))
}

/// One discovery call over a batch of tickets.
pub fn discover_batch(ctx: &AgentContext, tickets: &[&Ticket]) -> Result<CategorySet, AgentError> {
    let mut set = discover_one(ctx, Level::Top, tickets)?;
    set.provenance.batch_count = 1;
    set.provenance.sample_size = tickets.len();
    if set.is_empty() {
        set.provenance.empty_batches = 1;
    }
    Ok(set)
}

/// Merge several category sets into one.
///
/// A single set is returned unchanged without a model call. Otherwise one
/// merge call covers all sets when their serialized form fits the prompt
/// budget; if not, sets are merged pairwise level by level (a balanced
/// tree) until one remains.
pub fn merge_category_sets(ctx: &AgentContext, sets: Vec<CategorySet>) -> Result<CategorySet, AgentError> {
    merge_sets_at(ctx, Level::Top, sets)
}

fn merge_sets_at(ctx: &AgentContext, level: Level<'_>, mut sets: Vec<CategorySet>) -> Result<CategorySet, AgentError> {
    assert!(!sets.is_empty(), "merge needs at least one category set");
    while sets.len() > 1 {
        if serialized_len(&sets) <= ctx.prompt_budget_chars {
            return merge_call(ctx, level, &sets);
        }
        let pairs: Vec<&[CategorySet]> = sets.chunks(2).collect();
        let merged = ctx.fan_out(&pairs, |pair| {
            if pair.len() == 1 {
                Ok(pair[0].clone())
            } else {
                merge_call(ctx, level, pair)
            }
        });
        sets = merged.into_iter().collect::<Result<Vec<_>, _>>()?;
    }
    Ok(sets.pop().unwrap())
}

fn sets_json(sets: &[CategorySet]) -> String {
    serde_json::to_string_pretty(&sets.iter().map(CategorySet::prompt_json).collect::<Vec<_>>()).unwrap()
}

fn serialized_len(sets: &[CategorySet]) -> usize {
    sets_json(sets).len()
}

fn merge_call(ctx: &AgentContext, level: Level<'_>, sets: &[CategorySet]) -> Result<CategorySet, AgentError> {
    let prompt = prompts::render_pairs(TemplateName::CategoryMerge, &[("category_sets_json", &sets_json(sets))])?;
    let parent = match level {
        Level::Top => None,
        Level::Sub(p) => Some(p),
    };
    let sub = parent.is_some();
    let parsed = ctx.call_parsed(Role::Discovery, TemplateName::CategoryMerge, prompt, |t| parse_categories(t, sub))?;
    let mut merged = CategorySet::from_parsed(parsed, parent, level.cap());
    merged.provenance.batch_count = sets.iter().map(|s| s.provenance.batch_count).sum();
    merged.provenance.sample_size = sets.iter().map(|s| s.provenance.sample_size).sum();
    merged.provenance.empty_batches = sets.iter().map(|s| s.provenance.empty_batches).sum();
    Ok(merged)
}

/// Discover the top-level taxonomy.
pub fn discover(ctx: &AgentContext, train: &[&Ticket], config: &DiscoveryConfig) -> Result<CategorySet, DiscoveryError> {
    let sample = sample_tickets(train, config.sample_size, config.seed)?;
    let mut set = match config.mode {
        DiscoveryMode::Batch => run_batches(ctx, Level::Top, &sample, config.batch_size)?,
        DiscoveryMode::Iterative => run_iterative(ctx, &sample, config.batch_size)?,
    };
    set.provenance.mode = config.mode;
    set.provenance.sample_size = sample.len();
    set.provenance.seed = config.seed;
    Ok(set)
}

fn run_batches(
    ctx: &AgentContext,
    level: Level<'_>,
    sample: &[&Ticket],
    batch_size: usize,
) -> Result<CategorySet, DiscoveryError> {
    let batches: Vec<&[&Ticket]> = sample.chunks(batch_size.max(1)).collect();
    let results = ctx.fan_out(&batches, |batch| discover_one(ctx, level, batch));
    let batch_count = batches.len();
    let mut sets = Vec::new();
    let mut first_err = None;
    let mut failed = 0;
    let mut warnings = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => {
                warnings.push(format!("discovery batch {i} failed and was skipped: {e}"));
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if sets.is_empty() {
        return Err(DiscoveryError::AllBatchesFailed(first_err.unwrap()));
    }
    let empty = sets.iter().filter(|s| s.is_empty()).count();
    let non_empty: Vec<CategorySet> = sets.into_iter().filter(|s| !s.is_empty()).collect();
    let mut merged = match non_empty.len() {
        0 => CategorySet::default(),
        1 => non_empty.into_iter().next().unwrap(),
        _ => merge_sets_at(ctx, level, non_empty)?,
    };
    merged.provenance.batch_count = batch_count;
    merged.provenance.failed_batches = failed;
    merged.provenance.empty_batches = empty;
    for w in &warnings {
        tracing::warn!("{w}");
    }
    merged.warnings.extend(warnings);
    Ok(merged)
}

// Each step is one merge call whose inputs are the running taxonomy and the
// next ticket batch, so the model refines the taxonomy it has so far.
fn run_iterative(ctx: &AgentContext, sample: &[&Ticket], batch_size: usize) -> Result<CategorySet, DiscoveryError> {
    let batches: Vec<&[&Ticket]> = sample.chunks(batch_size.max(1)).collect();
    let mut running = CategorySet::default();
    let mut failed = 0;
    let mut first_err = None;
    for (i, batch) in batches.iter().enumerate() {
        let inputs = json!([
            {"source": "current taxonomy", "categories": running.prompt_json()["categories"]},
            {"source": "new ticket batch", "sample_tickets": batch.iter().map(|t| ticket_digest(t)).collect::<Vec<_>>()},
        ]);
        let prompt = prompts::render_pairs(
            TemplateName::CategoryMerge,
            &[("category_sets_json", &serde_json::to_string_pretty(&inputs).unwrap())],
        )
        .map_err(AgentError::from)?;
        match ctx.call_parsed(Role::Discovery, TemplateName::CategoryMerge, prompt, |t| parse_categories(t, false)) {
            Ok(parsed) => running = CategorySet::from_parsed(parsed, None, prompts::CATEGORY_PATTERN_CAP),
            Err(e) => {
                tracing::warn!("iterative discovery step {i} failed and was skipped: {e}");
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if failed == batches.len() {
        return Err(DiscoveryError::AllBatchesFailed(first_err.unwrap()));
    }
    running.provenance.batch_count = batches.len();
    running.provenance.failed_batches = failed;
    Ok(running)
}

/// Discover subcategories inside `parent` from its assigned tickets.
pub fn discover_subcategories(
    ctx: &AgentContext,
    parent: &Category,
    tickets: &[&Ticket],
    config: &DiscoveryConfig,
) -> Result<CategorySet, DiscoveryError> {
    let sample = sample_tickets(tickets, config.sample_size, config.seed)?;
    let mut set = run_batches(ctx, Level::Sub(parent), &sample, config.batch_size)?;
    set.provenance.mode = DiscoveryMode::Batch;
    set.provenance.sample_size = sample.len();
    set.provenance.seed = config.seed;
    Ok(set)
}

/// Pairwise merge-tree call count when no level ever fits the budget.
pub fn pairwise_merge_calls(sets: usize) -> usize {
    let mut n = sets;
    let mut calls = 0;
    while n > 1 {
        calls += n / 2;
        n = n.div_ceil(2);
    }
    calls
}
