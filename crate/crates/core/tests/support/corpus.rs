//! Random corpora and queries for discovery tests.

#![allow(dead_code)]

use std::sync::Arc;

use agentdns_core::discovery::DiscoveryQuery;
use agentdns_core::registry::{PriceModel, ServiceRecord, ServiceStatus};
use agentdns_core::{CategoryPath, ServiceName};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const VOCAB: &[&str] = &[
    "search", "web", "papers", "academic", "summarize", "translate", "image", "photo", "standards",
    "ieee", "itu", "weather", "forecast", "stock", "price", "finance", "code", "review", "agent",
    "protocol", "survey", "report", "keywords", "documents", "query", "retrieve", "news", "music",
    "video", "maps", "route", "travel", "email", "calendar", "legal", "medical",
];

const CATEGORIES: &[&str] = &["search", "academic", "academic/nlp", "media/image", "finance", "tools/dev"];

pub fn random_corpus(rng: &mut impl Rng, size: usize) -> Vec<Arc<ServiceRecord>> {
    (0..size)
        .map(|i| {
            let words = rng.random_range(2..14);
            let caps: Vec<&str> = (0..words).map(|_| *VOCAB.choose(rng).unwrap()).collect();
            let cat: CategoryPath = CATEGORIES.choose(rng).unwrap().parse().unwrap();
            let org = format!("org{}", rng.random_range(0..4));
            let name = ServiceName::new(&org, cat, &format!("svc{i}")).unwrap();
            Arc::new(ServiceRecord {
                name,
                version: 1,
                vendor_endpoint: "http://127.0.0.1:1".into(),
                protocols: ["HTTP".to_string()].into(),
                capabilities: caps.join(" "),
                pricing: PriceModel::per_call(rng.random_range(0..10)),
                vendor_credential_ref: None,
                ttl_seconds: None,
                status: ServiceStatus::Active,
                updated_at: 0,
            })
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng) -> DiscoveryQuery {
    let words = rng.random_range(1..7);
    let mut text: Vec<String> = (0..words).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect();
    if rng.random_bool(0.2) {
        text.push("unseenword".into());
    }
    let mut q = DiscoveryQuery::new(text.join(" "), rng.random_range(1..12));
    if rng.random_bool(0.2) {
        q.category_filter = Some(CATEGORIES.choose(rng).unwrap().parse().unwrap());
    }
    if rng.random_bool(0.2) {
        q.max_price = Some(rng.random_range(0..10));
    }
    q
}
