//! Okapi BM25 inverted index.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::RagError;
use crate::par::{self, ExecMode};

/// Lowercase, split on anything that is not alphanumeric, drop one-char terms.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    fn terms(&self) -> Vec<String> {
        let mut t = tokenize(&self.title);
        t.extend(tokenize(&self.body));
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Inverse document frequency with the +1 inside the log, so it is always
/// positive.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated term-frequency weight for one term in one document.
pub fn tf_weight(tf: f64, doc_len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    let norm = if avg_len > 0.0 { doc_len / avg_len } else { 0.0 };
    tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct SearchIndex {
    documents: Vec<Document>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    average_doc_length: f64,
    params: Bm25Params,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    params: Bm25Params,
    documents: Vec<Document>,
}

impl SearchIndex {
    pub fn build(documents: Vec<Document>, params: Bm25Params) -> Result<Self, RagError> {
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(RagError::DuplicateDocId(d.doc_id.clone()));
            }
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            let terms = d.terms();
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((i as u32, c));
            }
        }
        let average_doc_length = if documents.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / documents.len() as f64
        };
        Ok(Self {
            documents,
            postings,
            doc_lengths,
            average_doc_length,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn average_doc_length(&self) -> f64 {
        self.average_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.documents.iter().position(|d| d.doc_id == doc_id).map(|i| self.doc_lengths[i])
    }

    /// Per-document term counts for `term`, keyed by doc id.
    pub fn postings(&self, term: &str) -> BTreeMap<&str, u32> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, c)| (self.documents[d as usize].doc_id.as_str(), c)).collect())
            .unwrap_or_default()
    }

    /// Distinct indexed terms.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Top `k` documents by BM25. Zero-score documents are left out; equal
    /// scores are ordered by doc id.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Hit>, RagError> {
        if self.documents.is_empty() {
            return Err(RagError::EmptyIndex);
        }
        if k == 0 {
            return Err(RagError::InvalidK);
        }
        let mut terms = tokenize(query);
        let mut seen = HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));
        let n = self.documents.len();
        let mut scores = vec![0.0f64; n];
        let mut touched = vec![false; n];
        for t in &terms {
            let Some(list) = self.postings.get(t) else { continue };
            let w = idf(n, list.len());
            for &(d, tf) in list {
                let d = d as usize;
                scores[d] += w * tf_weight(tf as f64, self.doc_lengths[d] as f64, self.average_doc_length, self.params);
                touched[d] = true;
            }
        }
        let mut hits: Vec<(usize, f64)> = (0..n).filter(|&d| touched[d] && scores[d] > 0.0).map(|d| (d, scores[d])).collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.documents[a.0].doc_id.cmp(&self.documents[b.0].doc_id))
        });
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(d, score)| Hit {
                doc_id: self.documents[d].doc_id.clone(),
                score,
            })
            .collect())
    }

    /// [`SearchIndex::retrieve`] over many queries.
    pub fn retrieve_many(
        &self,
        queries: &[String],
        k: usize,
        exec: ExecMode,
        max_parallel: usize,
    ) -> Result<Vec<Vec<Hit>>, RagError> {
        par::map_bounded_with(exec, queries, max_parallel, |q| self.retrieve(q, k))
            .into_iter()
            .collect()
    }

    /// Documents and parameters only; postings are rebuilt on load.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(Persisted {
            params: self.params,
            documents: self.documents.clone(),
        })
        .unwrap()
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, RagError> {
        let p: Persisted = serde_json::from_value(value).map_err(|e| RagError::Persist(e.to_string()))?;
        Self::build(p.documents, p.params)
    }
}
