//! Evaluation harness: query generation, answering, LLM judging and
//! aggregation into a comparison report.

mod stats;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{
    distribution_delta, incomplete_beta, ln_gamma, mean, sample_std, sample_variance, t_two_sided_p, welch_t,
    StatsError, WelchResult,
};

use crate::agent::{AgentContext, AgentError, Role};
use crate::corpus::Ticket;
use crate::prompts::{self, parse_judgment, TemplateName};
use crate::rag::{Answer, RagError};
use crate::synthesis::format_ticket_data;

/// Method labels in report order.
pub const METHODS: [&str; 5] = ["raw", "per_ticket", "cluster", "multi_agent", "multi_level"];

pub const DEFAULT_RUNS: usize = 3;

const QUERY_MIN_WORDS: usize = 5;
const QUERY_MAX_WORDS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub ticket_id: String,
    pub query_text: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("ticket `{0}` has neither title nor description")]
    NothingToAsk(String),
    #[error("empty query generated for ticket `{0}`")]
    EmptyQuery(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Query-generation prompt. Only the title and description are shown.
pub fn query_prompt(ticket: &Ticket) -> String {
    prompts::render_pairs(
        TemplateName::QueryGeneration,
        &[("title", &ticket.title), ("description", &ticket.description)],
    )
    .expect("query template placeholders are fixed")
}

pub fn generate_query(ctx: &AgentContext, ticket: &Ticket) -> Result<EvalQuery, EvalError> {
    if ticket.title.trim().is_empty() && ticket.description.trim().is_empty() {
        return Err(EvalError::NothingToAsk(ticket.id.clone()));
    }
    let raw = ctx.call_text(Role::Judge, TemplateName::QueryGeneration, query_prompt(ticket))?;
    let text = raw.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string();
    if text.is_empty() {
        return Err(EvalError::EmptyQuery(ticket.id.clone()));
    }
    let words = text.split_whitespace().count();
    if !(QUERY_MIN_WORDS..=QUERY_MAX_WORDS).contains(&words) {
        tracing::warn!("query for `{}` has {words} words", ticket.id);
    }
    Ok(EvalQuery {
        ticket_id: ticket.id.clone(),
        query_text: text,
    })
}

/// Queries for every ticket that yields one, plus per-ticket failures.
pub fn generate_queries(ctx: &AgentContext, tickets: &[&Ticket]) -> (Vec<EvalQuery>, Vec<(String, String)>) {
    let results = ctx.fan_out(tickets, |t| generate_query(ctx, t));
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (t, r) in tickets.iter().zip(results) {
        match r {
            Ok(q) => ok.push(q),
            Err(e) => failed.push((t.id.clone(), e.to_string())),
        }
    }
    (ok, failed)
}

/// Reference text shown to the judge, comments included.
pub fn reference_content(ticket: &Ticket) -> String {
    format_ticket_data(&[ticket])
}

pub fn judge_prompt(question: &str, answer: &str, reference: &Ticket) -> String {
    prompts::render_pairs(
        TemplateName::AnswerEvaluation,
        &[
            ("question", question),
            ("answer", answer),
            ("ticket_content", &reference_content(reference)),
        ],
    )
    .expect("judge template placeholders are fixed")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalScore {
    pub query_id: String,
    pub run_index: usize,
    pub method: String,
    pub score: Option<u8>,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Score one answer. Parse failures survive as a missing score.
pub fn judge(ctx: &AgentContext, question: &str, answer_text: &str, reference: &Ticket) -> Result<(u8, String), AgentError> {
    let j = ctx.call_parsed(
        Role::Judge,
        TemplateName::AnswerEvaluation,
        judge_prompt(question, answer_text, reference),
        parse_judgment,
    )?;
    Ok((j.score, j.reasoning))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query_id: String,
    pub run_index: usize,
    pub method: String,
    pub answer: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Something that can answer a question from one knowledge base.
pub type Answerer<'a> = &'a (dyn Fn(&str) -> Result<Answer, RagError> + Sync);

/// Answer every query with every method, `runs` times. Rows come back in
/// (run, method, query) order.
pub fn answer_all(ctx: &AgentContext, queries: &[EvalQuery], methods: &[(&str, Answerer<'_>)], runs: usize) -> Vec<AnswerRecord> {
    let items: Vec<(usize, usize, usize)> = (1..=runs.max(1))
        .flat_map(|r| (0..methods.len()).flat_map(move |m| (0..queries.len()).map(move |q| (r, m, q))))
        .collect();
    ctx.fan_out(&items, |&(run, m, q)| {
        let (label, answer) = methods[m];
        let query = &queries[q];
        match answer(&query.query_text) {
            Ok(a) => AnswerRecord {
                query_id: query.ticket_id.clone(),
                run_index: run,
                method: label.to_string(),
                answer: Some(a),
                error: None,
            },
            Err(e) => AnswerRecord {
                query_id: query.ticket_id.clone(),
                run_index: run,
                method: label.to_string(),
                answer: None,
                error: Some(e.to_string()),
            },
        }
    })
}

/// Judge every answer row against its reference ticket.
pub fn judge_all(
    ctx: &AgentContext,
    queries: &[EvalQuery],
    answers: &[AnswerRecord],
    tickets: &BTreeMap<&str, &Ticket>,
) -> Vec<EvalScore> {
    let text: BTreeMap<&str, &str> = queries.iter().map(|q| (q.ticket_id.as_str(), q.query_text.as_str())).collect();
    ctx.fan_out(answers, |rec| {
        let mut row = EvalScore {
            query_id: rec.query_id.clone(),
            run_index: rec.run_index,
            method: rec.method.clone(),
            score: None,
            reasoning: String::new(),
            error: None,
        };
        let (Some(a), Some(q), Some(t)) = (&rec.answer, text.get(rec.query_id.as_str()), tickets.get(rec.query_id.as_str())) else {
            row.error = Some(rec.error.clone().unwrap_or_else(|| "missing answer, query or reference".into()));
            return row;
        };
        match judge(ctx, q, &a.answer_text, t) {
            Ok((s, reasoning)) => {
                row.score = Some(s);
                row.reasoning = reasoning;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub mean_helpfulness: f64,
    pub std_across_runs: f64,
    pub helpful_pct: f64,
    pub score_distribution: [f64; 5],
    pub scored: usize,
    pub missing: usize,
    pub run_means: Vec<f64>,
    #[serde(default)]
    pub kb_volume_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub method: String,
    pub baseline: String,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_count: usize,
    pub query_count: usize,
    pub baseline: Option<String>,
    pub methods: Vec<MethodStats>,
    pub pairwise: Vec<PairwiseTest>,
}

fn method_rank(m: &str) -> (usize, &str) {
    (METHODS.iter().position(|x| *x == m).unwrap_or(METHODS.len()), m)
}

/// Aggregate score rows. Statistics are built from integer counts in a
/// fixed order, so row order does not affect the result.
pub fn aggregate(scores: &[EvalScore], baseline: Option<&str>) -> EvalReport {
    // method -> run -> (sum, n)
    let mut per_run: BTreeMap<&str, BTreeMap<usize, (u64, u64)>> = BTreeMap::new();
    // method -> query -> (sum, n)
    let mut per_query: BTreeMap<&str, BTreeMap<&str, (u64, u64)>> = BTreeMap::new();
    let mut counts: BTreeMap<&str, [u64; 5]> = BTreeMap::new();
    let mut missing: BTreeMap<&str, usize> = BTreeMap::new();
    let mut runs = BTreeSet::new();
    let mut queries = BTreeSet::new();
    for s in scores {
        runs.insert(s.run_index);
        queries.insert(s.query_id.as_str());
        counts.entry(&s.method).or_default();
        let miss = missing.entry(&s.method).or_default();
        let Some(v) = s.score.filter(|v| (1..=5).contains(v)) else {
            *miss += 1;
            continue;
        };
        let r = per_run.entry(&s.method).or_default().entry(s.run_index).or_default();
        r.0 += u64::from(v);
        r.1 += 1;
        let q = per_query.entry(&s.method).or_default().entry(&s.query_id).or_default();
        q.0 += u64::from(v);
        q.1 += 1;
        counts.get_mut(s.method.as_str()).unwrap()[v as usize - 1] += 1;
    }

    let mut names: Vec<&str> = counts.keys().copied().collect();
    names.sort_by_key(|m| method_rank(m));
    let methods: Vec<MethodStats> = names
        .iter()
        .map(|m| {
            let run_means: Vec<f64> = per_run
                .get(m)
                .map(|r| r.values().map(|&(s, n)| s as f64 / n as f64).collect())
                .unwrap_or_default();
            let c = counts[m];
            let total: u64 = c.iter().sum();
            let dist = if total == 0 {
                [0.0; 5]
            } else {
                c.map(|x| x as f64 / total as f64)
            };
            MethodStats {
                method: m.to_string(),
                mean_helpfulness: if run_means.is_empty() { 0.0 } else { mean(&run_means) },
                std_across_runs: sample_std(&run_means),
                helpful_pct: dist[3] + dist[4],
                score_distribution: dist,
                scored: total as usize,
                missing: missing[m],
                run_means,
                kb_volume_ratio: None,
            }
        })
        .collect();

    let query_means = |m: &str| -> Vec<f64> {
        per_query
            .get(m)
            .map(|q| q.values().map(|&(s, n)| s as f64 / n as f64).collect())
            .unwrap_or_default()
    };
    let baseline = baseline.filter(|b| names.contains(b)).or_else(|| names.first().copied());
    let pairwise = match baseline {
        Some(b) => {
            let base = query_means(b);
            names
                .iter()
                .filter(|m| **m != b)
                .map(|m| {
                    let mut p = PairwiseTest {
                        method: m.to_string(),
                        baseline: b.to_string(),
                        t: None,
                        df: None,
                        p: None,
                        note: None,
                    };
                    match welch_t(&query_means(m), &base) {
                        Ok(r) => {
                            p.t = Some(r.t);
                            p.df = Some(r.df);
                            p.p = Some(r.p);
                        }
                        Err(e) => p.note = Some(e.to_string()),
                    }
                    p
                })
                .collect()
        }
        None => vec![],
    };
    EvalReport {
        run_count: runs.len(),
        query_count: queries.len(),
        baseline: baseline.map(str::to_string),
        methods,
        pairwise,
    }
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn set_volume(&mut self, method: &str, ratio: f64) {
        if let Some(m) = self.methods.iter_mut().find(|m| m.method == method) {
            m.kb_volume_ratio = Some(ratio);
        }
    }

    /// Comparison table as markdown.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation report\n\n");
        out.push_str(&format!("Runs: {}  \nQueries: {}\n\n", self.run_count, self.query_count));
        out.push_str("| Method | KB volume | Mean helpfulness | Std dev | Helpful (4-5) | Missing |\n");
        out.push_str("|---|---:|---:|---:|---:|---:|\n");
        for m in &self.methods {
            let vol = m.kb_volume_ratio.map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
            out.push_str(&format!(
                "| {} | {} | {:.2} | {:.2} | {:.2}% | {} |\n",
                m.method,
                vol,
                m.mean_helpfulness,
                m.std_across_runs,
                m.helpful_pct * 100.0,
                m.missing
            ));
        }
        out.push_str("\n## Score distribution\n\n| Method | 1 | 2 | 3 | 4 | 5 |\n|---|---:|---:|---:|---:|---:|\n");
        for m in &self.methods {
            let d = m.score_distribution;
            out.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                m.method, d[0], d[1], d[2], d[3], d[4]
            ));
        }
        if let Some(b) = &self.baseline {
            out.push_str(&format!("\n## Welch's t-test against `{b}`\n\n| Method | t | df | p |\n|---|---:|---:|---:|\n"));
            let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            for p in &self.pairwise {
                out.push_str(&format!("| {} | {} | {} | {} |\n", p.method, fmt(p.t), fmt(p.df), fmt(p.p)));
            }
        }
        out
    }
}
