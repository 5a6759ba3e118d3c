//! Retrieval-augmented answering and knowledge-base builders.

mod cluster;
mod index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cosine, Clusterer, GreedyClusterer, HashedTfEmbedder, TicketEmbedder};
pub use index::{idf, tf_weight, tokenize, Bm25Params, Document, Hit, SearchIndex};

use crate::agent::{AgentContext, AgentError, Role};
use crate::categorize::Failure;
use crate::corpus::Ticket;
use crate::discovery::Category;
use crate::prompts::{self, TemplateName};
use crate::synthesis::{self, KnowledgeArticle, SynthesisThresholds};

/// Default depth for single-KB retrieval.
pub const DEFAULT_K: usize = 10;
/// Depth per KB for multi-level answering.
pub const MULTI_LEVEL_K: usize = 5;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RagError {
    #[error("the index holds no documents")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("index persistence: {0}")]
    Persist(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub kb: String,
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub query: String,
    pub retrieved: Vec<RetrievedDoc>,
    pub answer_text: String,
    pub kb_label: String,
}

/// Article blocks for the answer prompt, tagged with their source KB.
pub fn format_articles(docs: &[(RetrievedDoc, Document)]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, (r, d))| format!("--- Article {}: {} [{}:{}] ---\n{}", i + 1, d.title, r.kb, r.doc_id, d.body.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// One generation call over already-retrieved documents.
pub fn generate_answer(
    ctx: &AgentContext,
    query: &str,
    kb_label: &str,
    docs: Vec<(RetrievedDoc, Document)>,
) -> Result<Answer, AgentError> {
    let prompt = prompts::render_pairs(
        TemplateName::AnswerGeneration,
        &[("articles", &format_articles(&docs)), ("question", query)],
    )?;
    let answer_text = ctx.call_text(Role::Answer, TemplateName::AnswerGeneration, prompt)?;
    Ok(Answer {
        query: query.to_string(),
        retrieved: docs.into_iter().map(|(r, _)| r).collect(),
        answer_text: answer_text.trim().to_string(),
        kb_label: kb_label.to_string(),
    })
}

fn fetch(index: &SearchIndex, kb: &str, query: &str, k: usize) -> Result<Vec<(RetrievedDoc, Document)>, RagError> {
    Ok(index
        .retrieve(query, k)?
        .into_iter()
        .map(|h| {
            let doc = index.document(&h.doc_id).expect("hit refers to an indexed document").clone();
            (
                RetrievedDoc {
                    kb: kb.to_string(),
                    doc_id: h.doc_id,
                    score: h.score,
                },
                doc,
            )
        })
        .collect())
}

/// Retrieve the top `k` from one KB and answer.
pub fn answer_query(ctx: &AgentContext, index: &SearchIndex, kb_label: &str, query: &str, k: usize) -> Result<Answer, RagError> {
    let docs = fetch(index, kb_label, query, k)?;
    Ok(generate_answer(ctx, query, kb_label, docs)?)
}

/// Top five from each KB, `a` block first, answered in one call.
pub fn multi_level_answer(
    ctx: &AgentContext,
    query: &str,
    a: (&str, &SearchIndex),
    b: (&str, &SearchIndex),
    label: &str,
) -> Result<Answer, RagError> {
    let mut docs = fetch(a.1, a.0, query, MULTI_LEVEL_K)?;
    docs.extend(fetch(b.1, b.0, query, MULTI_LEVEL_K)?);
    Ok(generate_answer(ctx, query, label, docs)?)
}

/// Documents produced by a KB builder and what happened to the tickets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KbBuild {
    pub documents: Vec<Document>,
    pub failed: Vec<Failure>,
    pub noise: Vec<String>,
    #[serde(default)]
    pub clustered_fraction: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl KbBuild {
    pub fn chars(&self) -> usize {
        self.documents.iter().map(|d| d.body.len()).sum()
    }
}

/// One document per ticket holding its full cleaned text.
pub fn build_raw_kb(tickets: &[&Ticket]) -> KbBuild {
    KbBuild {
        documents: tickets
            .iter()
            .map(|t| Document::new(t.id.clone(), t.title.clone(), t.full_text()))
            .collect(),
        ..Default::default()
    }
}

pub fn documents_from_articles(articles: &[KnowledgeArticle]) -> Vec<Document> {
    articles
        .iter()
        .map(|a| Document::new(a.id.clone(), a.title.clone(), a.body.clone()))
        .collect()
}

const PER_TICKET_CONTEXT_CHARS: usize = 200;

/// One synthesized article per ticket.
pub fn build_per_ticket_kb(ctx: &AgentContext, tickets: &[&Ticket]) -> KbBuild {
    let results = ctx.fan_out(tickets, |t| {
        let cat = Category {
            id: format!("ticket-{}", t.id),
            name: t.title.clone(),
            description: t.description.chars().take(PER_TICKET_CONTEXT_CHARS).collect(),
            identifying_patterns: vec![],
            parent: None,
        };
        synthesis::synthesize_standard(ctx, &cat, &[*t])
    });
    let mut out = KbBuild::default();
    for (t, r) in tickets.iter().zip(results) {
        match r {
            Ok(a) => out.documents.push(Document::new(a.id, a.title, a.body)),
            Err(e) => out.failed.push(Failure {
                ticket_id: t.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    out
}

/// Embed, cluster, then one article per non-noise cluster.
pub fn build_cluster_kb(
    ctx: &AgentContext,
    tickets: &[&Ticket],
    embedder: &dyn TicketEmbedder,
    clusterer: &dyn Clusterer,
    thresholds: &SynthesisThresholds,
) -> KbBuild {
    let vectors: Vec<Vec<f64>> = ctx.fan_out(tickets, |t| embedder.embed(&format!("{}\n{}", t.title, t.description)));
    let labels = clusterer.cluster(&vectors);
    let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut members: Vec<Vec<&Ticket>> = vec![Vec::new(); n_clusters];
    let mut out = KbBuild::default();
    for (t, &l) in tickets.iter().zip(&labels) {
        if l < 0 {
            out.noise.push(t.id.clone());
        } else {
            members[l as usize].push(*t);
        }
    }
    let clustered = tickets.len() - out.noise.len();
    out.clustered_fraction = Some(if tickets.is_empty() { 0.0 } else { clustered as f64 / tickets.len() as f64 });
    if n_clusters == 0 {
        let w = "clustering produced no clusters; the cluster KB is empty".to_string();
        tracing::warn!("{w}");
        out.warnings.push(w);
        return out;
    }
    let jobs: Vec<(Category, Vec<&Ticket>)> = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(i, m)| (cluster_category(i, &m), m))
        .collect();
    let results = ctx.fan_out(&jobs, |(cat, pool)| {
        if pool.len() >= thresholds.standard_max {
            synthesis::synthesize_batched(ctx, cat, pool, thresholds.batch_size)
        } else {
            synthesis::synthesize_standard(ctx, cat, pool)
        }
    });
    for ((_, pool), r) in jobs.iter().zip(results) {
        match r {
            Ok(a) => out.documents.push(Document::new(a.id, a.title, a.body)),
            Err(e) => {
                for t in pool {
                    out.failed.push(Failure {
                        ticket_id: t.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    out
}

// Names a cluster after its most frequent title terms.
fn cluster_category(i: usize, members: &[&Ticket]) -> Category {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for t in members {
        let mut seen = std::collections::BTreeSet::new();
        for w in tokenize(&t.title) {
            if seen.insert(w.clone()) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut top: Vec<(String, usize)> = counts.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let name = top.iter().take(3).map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
    Category {
        id: format!("cluster-{i:03}"),
        name: if name.is_empty() { format!("Cluster {i}") } else { name },
        description: format!("{} tickets grouped by textual similarity", members.len()),
        identifying_patterns: vec![],
        parent: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AuthorRole, Comment};
    use crate::llm::{FakeClock, Gateway, GatewayConfig, MockBackend};
    use chrono::{TimeZone, Utc};
    use std::sync::{Arc, Mutex};

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

    fn ticket(id: &str, title: &str, desc: &str) -> Ticket {
        Ticket {
            id: id.into(),
            title: title.into(),
            created_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
            description: desc.into(),
            comments: vec![Comment {
                author_role: AuthorRole::Resolver,
                created_at: None,
                body: format!("resolution for {id}"),
            }],
            status: Default::default(),
        }
    }

    fn capture(mock: &MockBackend, reply: &'static str) -> Arc<Mutex<Vec<String>>> {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = seen.clone();
        mock.register_fn("", move |r| {
            s.lock().unwrap().push(r.user_text.clone());
            Ok(reply.into())
        });
        seen
    }

    fn index(n: usize, word: &str) -> SearchIndex {
        let docs = (0..n)
            .map(|i| Document::new(format!("{word}{i}"), format!("T{i}"), format!("{word} {}", "pad ".repeat(i))))
            .collect();
        SearchIndex::build(docs, Bm25Params::default()).unwrap()
    }

    #[test]
    fn answer_carries_provenance() {
        let mock = Arc::new(MockBackend::new());
        let seen = capture(&mock, "Use the portal.");
        let c = ctx(mock);
        let idx = index(2, "badge");
        let a = answer_query(&c, &idx, "raw", "badge", 10).unwrap();
        assert_eq!(a.retrieved.len(), 2);
        assert_eq!(a.answer_text, "Use the portal.");
        assert!(a.retrieved[0].score > a.retrieved[1].score);
        assert!(seen.lock().unwrap()[0].contains("--- Article 1: T0 [raw:badge0] ---"));
    }

    #[test]
    fn zero_docs_still_answered() {
        let mock = Arc::new(MockBackend::new());
        let seen = capture(&mock, "Not covered.");
        let a = generate_answer(&ctx(mock), "why?", "raw", vec![]).unwrap();
        assert!(a.retrieved.is_empty());
        assert_eq!(seen.lock().unwrap().len(), 1);
        assert!(seen.lock().unwrap()[0].contains("# Knowledge Articles\n\n"));
    }

    #[test]
    fn multi_level_blocks() {
        let mock = Arc::new(MockBackend::new());
        let seen = capture(&mock, "ok");
        let c = ctx(mock);
        let a = multi_level_answer(&c, "dock", ("per_ticket", &index(8, "dock")), ("multi_agent", &index(8, "dock")), "multi_level").unwrap();
        assert_eq!(a.retrieved.len(), 10);
        assert_eq!(seen.lock().unwrap()[0].matches("--- Article ").count(), 10);
        assert!(a.retrieved[..5].iter().all(|r| r.kb == "per_ticket"));
        assert!(a.retrieved[5..].iter().all(|r| r.kb == "multi_agent"));
        let a = multi_level_answer(&c, "dock", ("per_ticket", &index(2, "dock")), ("multi_agent", &index(8, "dock")), "multi_level").unwrap();
        assert_eq!(a.retrieved.len(), 7);
    }

    #[test]
    fn raw_kb_contains_everything() {
        let ts: Vec<Ticket> = (0..4).map(|i| ticket(&format!("T{i}"), "title", "desc")).collect();
        let refs: Vec<&Ticket> = ts.iter().collect();
        let kb = build_raw_kb(&refs);
        assert_eq!(kb.documents.len(), 4);
        assert!(kb.documents[2].body.contains("resolution for T2"));
        assert_eq!(kb.chars(), synthesis::corpus_chars(&refs));
    }

    #[test]
    fn per_ticket_kb_with_failure() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("Name: title 3", "  ", 0);
        mock.register_mock_rule("", "# Article\nbody", 0);
        let c = ctx(mock);
        let ts: Vec<Ticket> = (0..10).map(|i| ticket(&format!("T{i}"), &format!("title {i}"), "desc")).collect();
        let refs: Vec<&Ticket> = ts.iter().collect();
        let kb = build_per_ticket_kb(&c, &refs);
        assert_eq!(c.gateway.calls_tagged("knowledge_synthesis"), 10);
        assert_eq!(kb.documents.len(), 9);
        assert_eq!(kb.failed.len(), 1);
        assert_eq!(kb.failed[0].ticket_id, "T3");
    }

    #[test]
    fn cluster_kb_three_topics() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("", "# Cluster article\nbody", 0);
        let c = ctx(mock);
        let topics = ["badge door access", "carrier shipment tracking", "inventory count mismatch"];
        let mut ts = Vec::new();
        for (k, topic) in topics.iter().enumerate() {
            for i in 0..3 {
                ts.push(ticket(&format!("T{k}{i}"), topic, &format!("{topic} problem")));
            }
        }
        let refs: Vec<&Ticket> = ts.iter().collect();
        let kb = build_cluster_kb(&c, &refs, &HashedTfEmbedder::default(), &GreedyClusterer::default(), &SynthesisThresholds::default());
        assert_eq!(kb.documents.len(), 3);
        assert!(kb.noise.is_empty());
        assert_eq!(kb.clustered_fraction, Some(1.0));

        let same: Vec<Ticket> = (0..4).map(|i| ticket(&format!("S{i}"), "same", "same text")).collect();
        let refs: Vec<&Ticket> = same.iter().collect();
        let kb = build_cluster_kb(&c, &refs, &HashedTfEmbedder::default(), &GreedyClusterer::default(), &SynthesisThresholds::default());
        assert_eq!(kb.documents.len(), 1);
    }

    #[test]
    fn all_noise_gives_empty_kb() {
        struct AllNoise;
        impl Clusterer for AllNoise {
            fn cluster(&self, v: &[Vec<f64>]) -> Vec<i64> {
                vec![-1; v.len()]
            }
        }
        let mock = Arc::new(MockBackend::new());
        let c = ctx(mock);
        let ts: Vec<Ticket> = (0..3).map(|i| ticket(&format!("T{i}"), "t", "d")).collect();
        let refs: Vec<&Ticket> = ts.iter().collect();
        let kb = build_cluster_kb(&c, &refs, &HashedTfEmbedder::default(), &AllNoise, &SynthesisThresholds::default());
        assert!(kb.documents.is_empty());
        assert_eq!(kb.noise.len(), 3);
        assert_eq!(kb.warnings.len(), 1);
    }
}
