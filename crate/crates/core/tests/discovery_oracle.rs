mod support;

use std::sync::Arc;

use agentdns_core::discovery::{fuse, Bm25Params, DiscoveryIndex, DiscoveryQuery, Exec, HashingEmbedder};
use agentdns_core::registry::ServiceRecord;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use support::corpus::{random_corpus, random_query};
use support::oracle::{oracle_rrf, oracle_search};

fn index_of(corpus: &[Arc<ServiceRecord>]) -> DiscoveryIndex {
    let idx = DiscoveryIndex::with_defaults();
    for r in corpus {
        idx.index_service(r);
    }
    idx
}

fn check(corpus: &[Arc<ServiceRecord>], idx: &DiscoveryIndex, q: &DiscoveryQuery) {
    let plain: Vec<ServiceRecord> = corpus.iter().map(|r| ServiceRecord::clone(r)).collect();
    let expected = oracle_search(&plain, q, &HashingEmbedder::default(), Bm25Params::default());
    for exec in [Exec::Sequential, Exec::Parallel] {
        let got: Vec<_> = idx
            .search_with(q, exec)
            .unwrap()
            .into_iter()
            .map(|h| (h.record.name.clone(), h.raw_score))
            .collect();
        assert_eq!(got, expected, "query {q:?}");
    }
}

#[test]
fn seeded_corpora_match_brute_force() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for _ in 0..10 {
        let size = rand::Rng::random_range(&mut rng, 1..=50);
        let corpus = random_corpus(&mut rng, size);
        let idx = index_of(&corpus);
        for _ in 0..30 {
            check(&corpus, &idx, &random_query(&mut rng));
        }
    }
}

#[test]
fn top3_of_ten() {
    let mut rng = StdRng::seed_from_u64(10);
    let corpus = random_corpus(&mut rng, 10);
    let idx = index_of(&corpus);
    let q = DiscoveryQuery::new("search web papers academic summarize", 3);
    let hits = idx.search(&q).unwrap();
    assert_eq!(hits.len(), 3);
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    check(&corpus, &idx, &q);
}

#[test]
fn deleted_records_leave_the_oracle_and_the_index_alike() {
    let mut rng = StdRng::seed_from_u64(77);
    let mut corpus = random_corpus(&mut rng, 20);
    let idx = index_of(&corpus);
    for i in (0..20).step_by(3) {
        let mut dead = ServiceRecord::clone(&corpus[i]);
        dead.version += 1;
        dead.status = agentdns_core::registry::ServiceStatus::Deleted;
        corpus[i] = Arc::new(dead);
        idx.index_service(&corpus[i]);
    }
    for _ in 0..20 {
        let q = random_query(&mut rng);
        check(&corpus, &idx, &q);
        for h in idx.search(&q).unwrap() {
            assert_eq!(h.record.status, agentdns_core::registry::ServiceStatus::Active);
        }
    }
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn rrf_matches_formula(a in permutation(5), b in permutation(5), la in 0usize..=5, lb in 0usize..=5) {
        const DOCS: [&str; 5] = ["d0", "d1", "d2", "d3", "d4"];
        let ra: Vec<&str> = a[..la].iter().map(|&i| DOCS[i]).collect();
        let rb: Vec<&str> = b[..lb].iter().map(|&i| DOCS[i]).collect();
        let got: Vec<(String, f64)> = fuse(&ra, &rb).into_iter().map(|f| (f.key.to_string(), f.raw)).collect();
        prop_assert_eq!(got, oracle_rrf(&ra, &rb));
    }

    #[test]
    fn search_matches_oracle(seed in any::<u64>(), size in 0usize..=50) {
        let mut rng = StdRng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, size);
        let idx = index_of(&corpus);
        for _ in 0..5 {
            let q = random_query(&mut rng);
            let hits = idx.search(&q).unwrap();
            prop_assert!(hits.len() <= q.k);
            prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
            prop_assert!(hits.iter().all(|h| (0.0..=1.0).contains(&h.score)));
            for h in &hits {
                if let Some(c) = &q.category_filter {
                    prop_assert!(c.is_prefix_of(h.record.name.category()));
                }
                if let Some(p) = q.max_price {
                    prop_assert!(h.record.pricing.amount <= p);
                }
            }
            check(&corpus, &idx, &q);
        }
    }
}
