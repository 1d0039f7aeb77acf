//! Identifier resolution and the client-side cache contract.

use std::collections::{BTreeSet, HashMap};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::naming::{NameError, ServiceName};
use crate::registry::{PriceModel, ServiceRecord, ServiceStatus};

pub const DEFAULT_RESOLUTION_TTL: u64 = 300;

#[derive(Debug, Error)]
pub enum ResolutionError {
    #[error("service `{0}` not found")]
    NotFound(String),
    #[error(transparent)]
    Malformed(#[from] NameError),
}

/// What agents may see of a record. The vendor endpoint and credential
/// reference are deliberately absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicRecord {
    pub name: ServiceName,
    pub version: u64,
    pub proxy_endpoint: String,
    pub protocols: BTreeSet<String>,
    pub capabilities: String,
    pub pricing: PriceModel,
    pub status: ServiceStatus,
}

impl PublicRecord {
    pub fn project(record: &ServiceRecord, proxy_base: &str) -> Self {
        Self {
            name: record.name.clone(),
            version: record.version,
            proxy_endpoint: proxy_endpoint(proxy_base, &record.name),
            protocols: record.protocols.clone(),
            capabilities: record.capabilities.clone(),
            pricing: record.pricing,
            status: record.status,
        }
    }
}

/// `{base}/proxy/{org}/{category...}/{name}`
pub fn proxy_endpoint(proxy_base: &str, name: &ServiceName) -> String {
    format!("{}/proxy/{}", proxy_base.trim_end_matches('/'), name.path())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResponse {
    pub record: PublicRecord,
    pub ttl_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientCacheEntry {
    pub response: ResolutionResponse,
    pub fetched_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Stale,
}

/// Fresh iff `now <= fetched_at + ttl_seconds` (closed interval).
pub fn cache_lookup(entry: &ClientCacheEntry, now: Timestamp) -> Freshness {
    let deadline = entry
        .fetched_at
        .saturating_add(entry.response.ttl_seconds.min(i64::MAX as u64) as i64);
    if now <= deadline {
        Freshness::Fresh
    } else {
        Freshness::Stale
    }
}

/// Builds the response for a live record; tombstones resolve as not found.
pub fn resolve_record(
    record: &ServiceRecord,
    proxy_base: &str,
    default_ttl: u64,
) -> Result<ResolutionResponse, ResolutionError> {
    if record.status == ServiceStatus::Deleted {
        return Err(ResolutionError::NotFound(record.name.to_string()));
    }
    Ok(ResolutionResponse {
        record: PublicRecord::project(record, proxy_base),
        ttl_seconds: record.ttl_seconds.unwrap_or(default_ttl),
    })
}

/// Name → response cache for clients.
#[derive(Debug, Default)]
pub struct ResolutionCache {
    entries: Mutex<HashMap<ServiceName, ClientCacheEntry>>,
}

impl ResolutionCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// The cached response if it is still fresh at `now`.
    pub fn get_fresh(&self, name: &ServiceName, now: Timestamp) -> Option<ResolutionResponse> {
        self.entries
            .lock()
            .get(name)
            .filter(|e| cache_lookup(e, now) == Freshness::Fresh)
            .map(|e| e.response.clone())
    }

    pub fn insert(&self, response: ResolutionResponse, now: Timestamp) {
        self.entries.lock().insert(
            response.record.name.clone(),
            ClientCacheEntry {
                response,
                fetched_at: now,
            },
        );
    }

    pub fn invalidate(&self, name: &ServiceName) {
        self.entries.lock().remove(name);
    }
}
