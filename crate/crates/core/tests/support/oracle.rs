//! Brute-force reference for hybrid search. Scores every document directly from
//! its text with no index: own tokenizer, own term counting, own corpus
//! statistics, own ranking and fusion. Only the embedding provider is shared.

#![allow(dead_code)]

use std::collections::HashMap;

use agentdns_core::discovery::{Bm25Params, DiscoveryQuery, EmbeddingProvider};
use agentdns_core::registry::{ServiceRecord, ServiceStatus};
use agentdns_core::ServiceName;

pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if cur.chars().count() >= 2 {
                out.push(cur.clone());
            }
            cur.clear();
        }
    }
    if cur.chars().count() >= 2 {
        out.push(cur);
    }
    out
}

fn doc_tokens(r: &ServiceRecord) -> Vec<String> {
    let mut t = oracle_tokens(&r.capabilities);
    t.extend(oracle_tokens(&r.name.to_string()));
    for seg in r.name.category().segments() {
        t.extend(oracle_tokens(seg));
    }
    t
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn ranked(mut v: Vec<(ServiceName, f64)>) -> Vec<ServiceName> {
    v.retain(|(_, s)| *s > 0.0);
    v.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.to_string().cmp(&b.0.to_string()))
    });
    v.into_iter().map(|(n, _)| n).collect()
}

/// Top-k `(name, raw fused score)` computed from scratch.
pub fn oracle_search(
    records: &[ServiceRecord],
    q: &DiscoveryQuery,
    embedder: &dyn EmbeddingProvider,
    params: Bm25Params,
) -> Vec<(ServiceName, f64)> {
    let corpus: Vec<&ServiceRecord> = records
        .iter()
        .filter(|r| r.status == ServiceStatus::Active)
        .collect();
    let docs: Vec<Vec<String>> = corpus.iter().map(|r| doc_tokens(r)).collect();
    let n = corpus.len() as f64;
    let total: usize = docs.iter().map(Vec::len).sum();
    let avgdl = if corpus.is_empty() { 0.0 } else { total as f64 / n };

    let mut qtokens: Vec<String> = Vec::new();
    for t in oracle_tokens(&q.text) {
        if !qtokens.contains(&t) {
            qtokens.push(t);
        }
    }
    let eligible: Vec<usize> = (0..corpus.len())
        .filter(|&i| {
            let r = corpus[i];
            let cat_ok = q.category_filter.as_ref().is_none_or(|c| {
                let want = c.segments();
                let have = r.name.category().segments();
                want.len() <= have.len() && want.iter().zip(have).all(|(a, b)| a == b)
            });
            let price_ok = q.max_price.is_none_or(|p| r.pricing.amount <= p);
            cat_ok && price_ok
        })
        .collect();

    let mut bm25 = Vec::new();
    for &i in &eligible {
        let dl = docs[i].len() as f64;
        let mut s = 0.0;
        for t in &qtokens {
            let tf = docs[i].iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * (tf * (params.k1 + 1.0))
                / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
        }
        bm25.push((corpus[i].name.clone(), s));
    }
    let qv = embedder.embed(&q.text);
    let vec_scores: Vec<(ServiceName, f64)> = eligible
        .iter()
        .map(|&i| (corpus[i].name.clone(), cosine(&qv, &embedder.embed(&corpus[i].capabilities))))
        .collect();

    let bm25_rank = ranked(bm25);
    let vec_rank = ranked(vec_scores);
    let mut fused: HashMap<ServiceName, f64> = HashMap::new();
    for (i, name) in bm25_rank.iter().enumerate() {
        *fused.entry(name.clone()).or_insert(0.0) += 1.0 / (60.0 + (i + 1) as f64);
    }
    for (i, name) in vec_rank.iter().enumerate() {
        *fused.entry(name.clone()).or_insert(0.0) += 1.0 / (60.0 + (i + 1) as f64);
    }
    let mut out: Vec<(ServiceName, f64)> = fused.into_iter().collect();
    out.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.to_string().cmp(&b.0.to_string()))
    });
    out.truncate(q.k);
    out
}

/// Reference reciprocal rank fusion straight from the formula.
pub fn oracle_rrf(a: &[&str], b: &[&str]) -> Vec<(String, f64)> {
    let mut keys: Vec<&str> = a.iter().chain(b).copied().collect();
    keys.sort();
    keys.dedup();
    let mut out: Vec<(String, f64)> = keys
        .into_iter()
        .map(|k| {
            let mut s = 0.0;
            if let Some(p) = a.iter().position(|x| *x == k) {
                s += 1.0 / (60.0 + (p + 1) as f64);
            }
            if let Some(p) = b.iter().position(|x| *x == k) {
                s += 1.0 / (60.0 + (p + 1) as f64);
            }
            (k.to_string(), s)
        })
        .collect();
    out.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then_with(|| x.0.cmp(&y.0)));
    out
}
