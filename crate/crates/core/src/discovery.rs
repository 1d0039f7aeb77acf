//! Natural-language service search.
//!
//! Each active record becomes one document: its capability text, its
//! canonical identifier and its category labels. A query is scored two ways
//! over the eligible documents (after category and price filters):
//!
//! * BM25 over an inverted index, with `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`
//!   where `N` and `df` are taken over the whole corpus;
//! * cosine similarity between embeddings from an [`EmbeddingProvider`].
//!
//! A document enters a ranking only with a strictly positive score. Rankings
//! order by score descending, then canonical name ascending, and are merged
//! with reciprocal rank fusion ([`fuse`]).
//!
//! Mutations build a new [`IndexSnapshot`] and swap it in; searches hold an
//! `Arc` to the snapshot they started with.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::naming::{CategoryPath, ServiceName};
use crate::registry::{ServiceRecord, ServiceStatus};

pub const RRF_K: f64 = 60.0;
pub const MAX_QUERY_LEN: usize = 2048;
pub const MAX_K: usize = 100;
pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("query text must be 1..={MAX_QUERY_LEN} characters")]
    EmptyQuery,
    #[error("k must be in 1..={MAX_K}, got {0}")]
    BadK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercase, split on anything that is not alphanumeric, drop 1-char tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() > 1)
        .map(str::to_string)
        .collect()
}

/// Text indexed for a record: capabilities, canonical name and category labels.
pub fn document_text(record: &ServiceRecord) -> String {
    format!(
        "{} {} {}",
        record.capabilities,
        record.name.as_str(),
        record.name.category().segments().join(" ")
    )
}

/// Deterministic text embedder producing L2-normalized vectors (or all zeros
/// when the text has no tokens).
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing over [`tokenize`] output.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let mut h = FnvHasher::default();
            h.write(token.as_bytes());
            let h = h.finish();
            let slot = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Sequential dot product; the summation order is part of the scoring contract.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryQuery {
    pub text: String,
    pub k: usize,
    #[serde(default)]
    pub category_filter: Option<CategoryPath>,
    #[serde(default)]
    pub max_price: Option<u64>,
}

impl DiscoveryQuery {
    pub fn new(text: impl Into<String>, k: usize) -> Self {
        Self {
            text: text.into(),
            k,
            category_filter: None,
            max_price: None,
        }
    }

    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let n = self.text.chars().count();
        if self.text.trim().is_empty() || n > MAX_QUERY_LEN {
            return Err(DiscoveryError::EmptyQuery);
        }
        if self.k == 0 || self.k > MAX_K {
            return Err(DiscoveryError::BadK(self.k));
        }
        Ok(())
    }

    pub fn admits(&self, record: &ServiceRecord) -> bool {
        self.category_filter
            .as_ref()
            .is_none_or(|c| c.is_prefix_of(record.name.category()))
            && self.max_price.is_none_or(|p| record.pricing.amount <= p)
    }
}

/// Fused score of one key.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused<K> {
    pub key: K,
    /// `Σ 1/(60 + rank)` over the rankings containing the key.
    pub raw: f64,
    /// `raw` min-max normalized over the fused set; 1.0 when all raws are equal.
    pub score: f64,
}

/// Reciprocal rank fusion of two best-first rankings (rank = position + 1).
///
/// Output is sorted by raw score descending, then key ascending.
pub fn fuse<K: Ord + Clone + std::hash::Hash>(bm25: &[K], vector: &[K]) -> Vec<Fused<K>> {
    let mut raw: HashMap<&K, f64> = HashMap::new();
    for ranking in [bm25, vector] {
        for (pos, key) in ranking.iter().enumerate() {
            *raw.entry(key).or_insert(0.0) += 1.0 / (RRF_K + (pos + 1) as f64);
        }
    }
    let mut fused: Vec<Fused<K>> = raw
        .into_iter()
        .map(|(k, r)| Fused {
            key: k.clone(),
            raw: r,
            score: 0.0,
        })
        .collect();
    fused.sort_by(|a, b| b.raw.total_cmp(&a.raw).then_with(|| a.key.cmp(&b.key)));
    let max = fused.first().map_or(0.0, |f| f.raw);
    let min = fused.last().map_or(0.0, |f| f.raw);
    for f in &mut fused {
        f.score = if max > min {
            (f.raw - min) / (max - min)
        } else {
            1.0
        };
    }
    fused
}

/// Orders `(key, score)` pairs best-first, keeping only positive scores.
pub fn rank_positive<K: Ord + Clone>(mut scored: Vec<(K, f64)>) -> Vec<K> {
    scored.retain(|(_, s)| *s > 0.0);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().map(|(k, _)| k).collect()
}

/// How to scan documents for vector scores and batch queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is on, otherwise runs sequentially.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

#[derive(Debug, Clone)]
struct Doc {
    record: Arc<ServiceRecord>,
    length: u32,
    embedding: Arc<Vec<f64>>,
}

/// One search hit; `record` is the snapshot the score was computed on.
#[derive(Debug, Clone)]
pub struct Hit {
    pub record: Arc<ServiceRecord>,
    pub score: f64,
    pub raw_score: f64,
    pub rank: usize,
}

/// Immutable index state.
#[derive(Debug, Clone, Default)]
pub struct IndexSnapshot {
    docs: BTreeMap<ServiceName, Doc>,
    postings: HashMap<String, BTreeMap<ServiceName, u32>>,
    total_len: u64,
}

impl IndexSnapshot {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, name: &ServiceName) -> bool {
        self.docs.contains_key(name)
    }

    pub fn version_of(&self, name: &ServiceName) -> Option<u64> {
        self.docs.get(name).map(|d| d.record.version)
    }

    /// Number of distinct documents containing `token`.
    pub fn doc_freq(&self, token: &str) -> usize {
        self.postings.get(token).map_or(0, BTreeMap::len)
    }

    pub fn records(&self) -> impl Iterator<Item = &Arc<ServiceRecord>> {
        self.docs.values().map(|d| &d.record)
    }

    fn remove(&mut self, name: &ServiceName) {
        if let Some(doc) = self.docs.remove(name) {
            self.total_len -= doc.length as u64;
            self.postings.retain(|_, p| {
                p.remove(name);
                !p.is_empty()
            });
        }
    }

    fn insert(&mut self, record: Arc<ServiceRecord>, embedder: &dyn EmbeddingProvider) {
        let name = record.name.clone();
        self.remove(&name);
        let tokens = tokenize(&document_text(&record));
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (t, n) in tf {
            self.postings.entry(t).or_default().insert(name.clone(), n);
        }
        self.total_len += tokens.len() as u64;
        let embedding = Arc::new(embedder.embed(&record.capabilities));
        self.docs.insert(
            name,
            Doc {
                record,
                length: tokens.len() as u32,
                embedding,
            },
        );
    }

    fn bm25_scores(
        &self,
        query_tokens: &[String],
        eligible: &HashSet<&ServiceName>,
        params: Bm25Params,
    ) -> HashMap<ServiceName, f64> {
        let n = self.docs.len() as f64;
        let avgdl = if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / n
        };
        let mut scores: HashMap<ServiceName, f64> = HashMap::new();
        for token in query_tokens {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for (name, &tf) in postings {
                if !eligible.contains(name) {
                    continue;
                }
                let dl = self.docs[name].length as f64;
                let tf = tf as f64;
                let contrib = idf * (tf * (params.k1 + 1.0))
                    / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
                *scores.entry(name.clone()).or_insert(0.0) += contrib;
            }
        }
        scores
    }

    fn vector_scores(&self, query_vec: &[f64], eligible: &[&Doc], exec: Exec) -> Vec<(ServiceName, f64)> {
        let score = |d: &&Doc| (d.record.name.clone(), dot(query_vec, &d.embedding));
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                eligible.par_iter().map(score).collect()
            }
            _ => eligible.iter().map(score).collect(),
        }
    }

    pub fn search_with(
        &self,
        query: &DiscoveryQuery,
        embedder: &dyn EmbeddingProvider,
        params: Bm25Params,
        exec: Exec,
    ) -> Result<Vec<Hit>, DiscoveryError> {
        query.validate()?;
        let eligible: Vec<&Doc> = self
            .docs
            .values()
            .filter(|d| query.admits(&d.record))
            .collect();
        if eligible.is_empty() {
            return Ok(Vec::new());
        }
        let mut query_tokens = Vec::new();
        let mut seen = HashSet::new();
        for t in tokenize(&query.text) {
            if seen.insert(t.clone()) {
                query_tokens.push(t);
            }
        }
        let eligible_names: HashSet<&ServiceName> =
            eligible.iter().map(|d| &d.record.name).collect();
        let bm25 = rank_positive(
            self.bm25_scores(&query_tokens, &eligible_names, params)
                .into_iter()
                .collect(),
        );
        let query_vec = embedder.embed(&query.text);
        let vector = rank_positive(self.vector_scores(&query_vec, &eligible, exec));
        Ok(fuse(&bm25, &vector)
            .into_iter()
            .take(query.k)
            .enumerate()
            .map(|(i, f)| Hit {
                record: Arc::clone(&self.docs[&f.key].record),
                score: f.score,
                raw_score: f.raw,
                rank: i + 1,
            })
            .collect())
    }
}

/// The live keyword + vector index over active service records.
pub struct DiscoveryIndex {
    current: RwLock<Arc<IndexSnapshot>>,
    embedder: Arc<dyn EmbeddingProvider>,
    params: Bm25Params,
}

impl DiscoveryIndex {
    pub fn new(embedder: Arc<dyn EmbeddingProvider>, params: Bm25Params) -> Self {
        Self {
            current: RwLock::new(Arc::new(IndexSnapshot::default())),
            embedder,
            params,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(Arc::new(HashingEmbedder::default()), Bm25Params::default())
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn snapshot(&self) -> Arc<IndexSnapshot> {
        Arc::clone(&self.current.read())
    }

    /// Builds a fresh snapshot from scratch and swaps it in.
    pub fn rebuild<'a>(&self, records: impl IntoIterator<Item = &'a Arc<ServiceRecord>>) {
        let mut snap = IndexSnapshot::default();
        for r in records {
            if r.status == ServiceStatus::Active {
                snap.insert(Arc::clone(r), self.embedder.as_ref());
            }
        }
        *self.current.write() = Arc::new(snap);
    }

    /// Upserts an active record, or removes the name for any other status.
    /// Stale versions (older than what is indexed) are ignored.
    pub fn index_service(&self, record: &Arc<ServiceRecord>) {
        let mut guard = self.current.write();
        if guard
            .version_of(&record.name)
            .is_some_and(|v| v > record.version)
        {
            return;
        }
        let mut next = IndexSnapshot::clone(&guard);
        if record.status == ServiceStatus::Active {
            next.insert(Arc::clone(record), self.embedder.as_ref());
        } else {
            next.remove(&record.name);
        }
        *guard = Arc::new(next);
    }

    pub fn remove(&self, name: &ServiceName) {
        let mut guard = self.current.write();
        if guard.contains(name) {
            let mut next = IndexSnapshot::clone(&guard);
            next.remove(name);
            *guard = Arc::new(next);
        }
    }

    pub fn search(&self, query: &DiscoveryQuery) -> Result<Vec<Hit>, DiscoveryError> {
        self.search_with(query, Exec::default())
    }

    pub fn search_with(&self, query: &DiscoveryQuery, exec: Exec) -> Result<Vec<Hit>, DiscoveryError> {
        self.snapshot()
            .search_with(query, self.embedder.as_ref(), self.params, exec)
    }

    /// Runs many queries against one snapshot.
    pub fn search_many(
        &self,
        queries: &[DiscoveryQuery],
        exec: Exec,
    ) -> Vec<Result<Vec<Hit>, DiscoveryError>> {
        let snap = self.snapshot();
        let run = |q: &DiscoveryQuery| {
            snap.search_with(q, self.embedder.as_ref(), self.params, Exec::Sequential)
        };
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                queries.par_iter().map(run).collect()
            }
            _ => queries.iter().map(run).collect(),
        }
    }
}
