//! Organizations and versioned service records.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::naming::{validate_label, CategoryPath, NameError, ServiceName};
use crate::store::{Journal, StoreError};

pub const MAX_CAPABILITIES_LEN: usize = 4096;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("organization `{0}` already exists")]
    DuplicateOrg(String),
    #[error(transparent)]
    IllegalLabel(#[from] NameError),
    #[error("unknown organization `{0}`")]
    UnknownOrg(String),
    #[error("organization `{0}` is not verified")]
    UnverifiedOrg(String),
    #[error("service `{0}` is already registered")]
    DuplicateName(ServiceName),
    #[error("service `{0}` not found")]
    NotFound(String),
    #[error("version conflict: expected {expected}, stored {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organization {
    pub org_id: String,
    pub display_name: String,
    pub verified: bool,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceUnit {
    #[default]
    PerCall,
}

/// Micro-credits charged per call. Zero means free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PriceModel {
    #[serde(default)]
    pub unit: PriceUnit,
    pub amount: u64,
}

impl PriceModel {
    pub fn per_call(amount: u64) -> Self {
        Self {
            unit: PriceUnit::PerCall,
            amount,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceStatus {
    Active,
    Deprecated,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub name: ServiceName,
    pub version: u64,
    pub vendor_endpoint: String,
    pub protocols: BTreeSet<String>,
    pub capabilities: String,
    pub pricing: PriceModel,
    pub vendor_credential_ref: Option<String>,
    /// Resolution TTL chosen by the vendor; `None` uses the server default.
    pub ttl_seconds: Option<u64>,
    pub status: ServiceStatus,
    pub updated_at: Timestamp,
}

impl ServiceRecord {
    pub fn is_live(&self) -> bool {
        self.status != ServiceStatus::Deleted
    }
}

/// Everything a vendor supplies at registration time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub vendor_endpoint: String,
    pub protocols: BTreeSet<String>,
    pub capabilities: String,
    pub pricing: PriceModel,
    #[serde(default)]
    pub vendor_credential_ref: Option<String>,
    #[serde(default)]
    pub ttl_seconds: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServicePatch {
    #[serde(default)]
    pub vendor_endpoint: Option<String>,
    #[serde(default)]
    pub protocols: Option<BTreeSet<String>>,
    #[serde(default)]
    pub capabilities: Option<String>,
    #[serde(default)]
    pub pricing: Option<PriceModel>,
    #[serde(default)]
    pub vendor_credential_ref: Option<String>,
    #[serde(default)]
    pub ttl_seconds: Option<u64>,
    /// Only `active` and `deprecated` are accepted here; deletion has its own operation.
    #[serde(default)]
    pub status: Option<ServiceStatus>,
}

pub fn validate_endpoint(endpoint: &str) -> Result<(), RegistryError> {
    let url = url::Url::parse(endpoint)
        .map_err(|e| RegistryError::InvalidMetadata(format!("vendor_endpoint: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(RegistryError::InvalidMetadata(format!(
            "vendor_endpoint must be an absolute http(s) URL, got `{endpoint}`"
        )));
    }
    if url.query().is_some() || url.fragment().is_some() {
        return Err(RegistryError::InvalidMetadata(
            "vendor_endpoint must not carry a query or fragment".into(),
        ));
    }
    Ok(())
}

pub fn normalize_protocols(protocols: &BTreeSet<String>) -> Result<BTreeSet<String>, RegistryError> {
    if protocols.is_empty() {
        return Err(RegistryError::InvalidMetadata(
            "at least one protocol tag is required".into(),
        ));
    }
    protocols
        .iter()
        .map(|p| {
            let ok = !p.is_empty()
                && p.len() <= 32
                && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
            if ok {
                Ok(p.to_ascii_uppercase())
            } else {
                Err(RegistryError::InvalidMetadata(format!("bad protocol tag `{p}`")))
            }
        })
        .collect()
}

pub fn validate_capabilities(text: &str) -> Result<(), RegistryError> {
    let n = text.chars().count();
    if n == 0 || n > MAX_CAPABILITIES_LEN || text.trim().is_empty() {
        return Err(RegistryError::InvalidMetadata(format!(
            "capabilities must be 1..={MAX_CAPABILITIES_LEN} characters"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RegistryEvent {
    Org(Organization),
    Service(ServiceRecord),
}

/// In-memory view of orgs and services, journaled on every accepted write.
///
/// Records handed out are immutable `Arc` snapshots; each write installs a new one.
pub struct Registry {
    orgs: RwLock<BTreeMap<String, Organization>>,
    services: RwLock<BTreeMap<ServiceName, Arc<ServiceRecord>>>,
    journal: Journal<RegistryEvent>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Self {
            orgs: RwLock::default(),
            services: RwLock::default(),
            journal: Journal::in_memory(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, RegistryError> {
        let (journal, events) = Journal::open(path)?;
        let mut orgs = BTreeMap::new();
        let mut services = BTreeMap::new();
        for ev in events {
            match ev {
                RegistryEvent::Org(o) => {
                    orgs.insert(o.org_id.clone(), o);
                }
                RegistryEvent::Service(r) => {
                    services.insert(r.name.clone(), Arc::new(r));
                }
            }
        }
        Ok(Self {
            orgs: RwLock::new(orgs),
            services: RwLock::new(services),
            journal,
        })
    }

    pub fn sync(&self) -> Result<(), RegistryError> {
        Ok(self.journal.sync()?)
    }

    pub fn register_org(
        &self,
        org_id: &str,
        display_name: &str,
        now: Timestamp,
    ) -> Result<Organization, RegistryError> {
        validate_label(org_id)?;
        let mut orgs = self.orgs.write();
        if orgs.contains_key(org_id) {
            return Err(RegistryError::DuplicateOrg(org_id.to_string()));
        }
        let org = Organization {
            org_id: org_id.to_string(),
            display_name: display_name.to_string(),
            verified: false,
            created_at: now,
        };
        self.journal.append(&RegistryEvent::Org(org.clone()))?;
        orgs.insert(org.org_id.clone(), org.clone());
        Ok(org)
    }

    pub fn verify_org(&self, org_id: &str) -> Result<Organization, RegistryError> {
        let mut orgs = self.orgs.write();
        let org = orgs
            .get_mut(org_id)
            .ok_or_else(|| RegistryError::UnknownOrg(org_id.to_string()))?;
        if !org.verified {
            let mut updated = org.clone();
            updated.verified = true;
            self.journal.append(&RegistryEvent::Org(updated.clone()))?;
            *org = updated;
        }
        Ok(org.clone())
    }

    pub fn get_org(&self, org_id: &str) -> Option<Organization> {
        self.orgs.read().get(org_id).cloned()
    }

    pub fn orgs(&self) -> Vec<Organization> {
        self.orgs.read().values().cloned().collect()
    }

    pub fn register_service(
        &self,
        org_id: &str,
        category: &CategoryPath,
        name: &str,
        spec: ServiceSpec,
        now: Timestamp,
    ) -> Result<Arc<ServiceRecord>, RegistryError> {
        let org_id = org_id.to_ascii_lowercase();
        validate_label(&org_id)?;
        match self.orgs.read().get(&org_id) {
            None => return Err(RegistryError::UnknownOrg(org_id)),
            Some(o) if !o.verified => return Err(RegistryError::UnverifiedOrg(org_id)),
            Some(_) => {}
        }
        let service_name = ServiceName::new(&org_id, category.clone(), name)?;
        validate_endpoint(&spec.vendor_endpoint)?;
        validate_capabilities(&spec.capabilities)?;
        let protocols = normalize_protocols(&spec.protocols)?;

        let mut services = self.services.write();
        // Tombstones stay in the map, so deleted names are never reusable.
        if services.contains_key(&service_name) {
            return Err(RegistryError::DuplicateName(service_name));
        }
        let record = ServiceRecord {
            name: service_name.clone(),
            version: 1,
            vendor_endpoint: spec.vendor_endpoint,
            protocols,
            capabilities: spec.capabilities,
            pricing: spec.pricing,
            vendor_credential_ref: spec.vendor_credential_ref,
            ttl_seconds: spec.ttl_seconds,
            status: ServiceStatus::Active,
            updated_at: now,
        };
        self.journal.append(&RegistryEvent::Service(record.clone()))?;
        let record = Arc::new(record);
        services.insert(service_name, Arc::clone(&record));
        Ok(record)
    }

    /// Compare-and-set update. An empty patch still bumps the version.
    pub fn update_service(
        &self,
        name: &ServiceName,
        patch: ServicePatch,
        expected_version: u64,
        now: Timestamp,
    ) -> Result<Arc<ServiceRecord>, RegistryError> {
        let mut services = self.services.write();
        let current = services
            .get(name)
            .filter(|r| r.is_live())
            .ok_or_else(|| RegistryError::NotFound(name.to_string()))?;
        if current.version != expected_version {
            return Err(RegistryError::VersionConflict {
                expected: expected_version,
                actual: current.version,
            });
        }
        let mut next = ServiceRecord::clone(current);
        if let Some(endpoint) = patch.vendor_endpoint {
            validate_endpoint(&endpoint)?;
            next.vendor_endpoint = endpoint;
        }
        if let Some(protocols) = patch.protocols {
            next.protocols = normalize_protocols(&protocols)?;
        }
        if let Some(caps) = patch.capabilities {
            validate_capabilities(&caps)?;
            next.capabilities = caps;
        }
        if let Some(pricing) = patch.pricing {
            next.pricing = pricing;
        }
        if let Some(cred) = patch.vendor_credential_ref {
            next.vendor_credential_ref = Some(cred);
        }
        if let Some(ttl) = patch.ttl_seconds {
            next.ttl_seconds = Some(ttl);
        }
        match patch.status {
            Some(ServiceStatus::Deleted) => {
                return Err(RegistryError::InvalidMetadata(
                    "use delete to remove a service".into(),
                ))
            }
            Some(s) => next.status = s,
            None => {}
        }
        next.version += 1;
        next.updated_at = now;
        self.journal.append(&RegistryEvent::Service(next.clone()))?;
        let next = Arc::new(next);
        services.insert(name.clone(), Arc::clone(&next));
        Ok(next)
    }

    /// Tombstones the record. The version is bumped so the audit trail stays gapless.
    pub fn delete_service(
        &self,
        name: &ServiceName,
        now: Timestamp,
    ) -> Result<Arc<ServiceRecord>, RegistryError> {
        let mut services = self.services.write();
        let current = services
            .get(name)
            .filter(|r| r.is_live())
            .ok_or_else(|| RegistryError::NotFound(name.to_string()))?;
        let mut next = ServiceRecord::clone(current);
        next.status = ServiceStatus::Deleted;
        next.version += 1;
        next.updated_at = now;
        self.journal.append(&RegistryEvent::Service(next.clone()))?;
        let next = Arc::new(next);
        services.insert(name.clone(), Arc::clone(&next));
        Ok(next)
    }

    /// Latest non-deleted record.
    pub fn get_service(&self, name: &ServiceName) -> Result<Arc<ServiceRecord>, RegistryError> {
        self.services
            .read()
            .get(name)
            .filter(|r| r.is_live())
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(name.to_string()))
    }

    /// Latest record including tombstones; admin use only.
    pub fn get_service_admin(
        &self,
        name: &ServiceName,
    ) -> Result<Arc<ServiceRecord>, RegistryError> {
        self.services
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(name.to_string()))
    }

    pub fn all_records(&self) -> Vec<Arc<ServiceRecord>> {
        self.services.read().values().cloned().collect()
    }

    pub fn live_count(&self) -> usize {
        self.services.read().values().filter(|r| r.is_live()).count()
    }
}
